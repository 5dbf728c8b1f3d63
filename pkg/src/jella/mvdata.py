"""Multi-view datasets: containers, CSV I/O, masking and synthetic data.

Views are stored feature-by-sample (``d_v x n``). A mask entry of 1 marks an
observed value; unobserved cells hold NaN in ``data``.

Randomness always goes through :func:`make_rng`, a Philox (counter-based,
64-bit) bit generator seeded with a single integer, so a given seed yields
the same masks on every platform numpy supports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ViewMatrix",
    "MultiViewDataset",
    "OmegaSets",
    "make_rng",
    "round_half_up",
    "load_dataset",
    "save_dataset",
    "apply_missing_view_mask",
    "apply_incomplete_mask",
    "synth_union_of_subspaces",
    "omega_sets",
]


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def round_half_up(x: float) -> int:
    # tiny slack so 2.4999999999999996 from m*n rounding still counts as a half
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True, eq=False)
class ViewMatrix:
    """One view: data (d_v x n) and its 0/1 existence mask of the same shape."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError(f"view data must be 2-D, got shape {data.shape}")
        mask = np.array(self.mask)
        if mask.shape != data.shape:
            raise ValueError(f"mask shape {mask.shape} != data shape {data.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        mask = mask.astype(bool)
        if not np.all(np.isfinite(data[mask])):
            raise ValueError("observed entries must be finite")
        data = np.where(mask, data, np.nan)
        data.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def full(cls, data):
        data = np.asarray(data, dtype=float)
        return cls(data, np.ones(data.shape, dtype=bool))

    @property
    def shape(self):
        return self.data.shape

    def observed(self):
        """Data with unobserved entries set to 0 (i.e. ``mask * X``)."""
        return np.where(self.mask, self.data, 0.0)

    def with_mask(self, mask):
        return ViewMatrix(np.where(mask, self.data, np.nan), mask)


@dataclass(frozen=True, eq=False)
class MultiViewDataset:
    views: tuple
    labels: Optional[np.ndarray] = None
    n: int = field(init=False)

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise ValueError("dataset needs at least one view")
        n = views[0].shape[1]
        for v, view in enumerate(views):
            if view.shape[1] != n:
                raise ValueError(
                    f"view {v} has {view.shape[1]} columns, expected {n}"
                )
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (n,):
                raise ValueError(f"labels must have length {n}, got {labels.shape}")
            if not np.issubdtype(labels.dtype, np.integer):
                if not np.all(labels == np.round(labels)):
                    raise ValueError("labels must be integers")
                labels = labels.astype(int)
            if labels.size and labels.min() < 1:
                raise ValueError("labels are 1-based")
            labels = labels.copy()
            labels.setflags(write=False)
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n", n)

    @property
    def n_views(self):
        return len(self.views)

    @property
    def masks(self):
        return [view.mask for view in self.views]

    def present(self):
        """Boolean (V x n): sample i has at least one observed entry in view v."""
        return np.array([view.mask.any(axis=0) for view in self.views])

    def replace_masks(self, masks):
        views = tuple(view.with_mask(m) for view, m in zip(self.views, masks))
        return MultiViewDataset(views, self.labels)


@dataclass(frozen=True)
class OmegaSets:
    """Per-view sorted indices of samples whose column is fully observed."""

    sets: tuple
    n: int

    def __getitem__(self, v):
        return self.sets[v]

    def __len__(self):
        return len(self.sets)

    def sizes(self):
        return [len(s) for s in self.sets]

    def views_of(self, i):
        return [v for v, s in enumerate(self.sets) if i in set(s.tolist())]

    def availability(self):
        """Boolean (V x n) membership matrix."""
        A = np.zeros((len(self.sets), self.n), dtype=bool)
        for v, s in enumerate(self.sets):
            A[v, s] = True
        return A


def omega_sets(ds: MultiViewDataset) -> OmegaSets:
    full = np.array([view.mask.all(axis=0) for view in ds.views])
    orphans = np.flatnonzero(~full.any(axis=0))
    if orphans.size:
        raise ValueError(
            f"samples {orphans[:10].tolist()} are not fully observed in any view"
        )
    return OmegaSets(tuple(np.flatnonzero(row) for row in full), ds.n)


# ---------------------------------------------------------------- file I/O


def _read_matrix(path):
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise ValueError(f"{path}: empty file")
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(cell) for cell in line.split(",")])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: rows have differing lengths {sorted(widths)}")
    return np.array(rows, dtype=float)


def _read_labels(path):
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    try:
        return np.array([int(ln) for ln in lines])
    except ValueError as exc:
        raise ValueError(f"{path}: bad label ({exc})") from None


def load_dataset(view_paths: Sequence, label_path=None, mask_paths=None):
    """Load one CSV per view (rows = features, NaN = missing) plus labels.

    ``mask_paths`` optionally supplies explicit 0/1 grids; a cell is observed
    only if the mask says so and the value is not NaN.
    """
    if not view_paths:
        raise ValueError("no view files given")
    views = []
    for v, path in enumerate(view_paths):
        data = _read_matrix(path)
        mask = ~np.isnan(data)
        if np.any(np.isinf(data)):
            raise ValueError(f"{path}: infinite values are not allowed")
        if mask_paths is not None:
            explicit = _read_matrix(mask_paths[v])
            if explicit.shape != data.shape:
                raise ValueError(f"{mask_paths[v]}: mask shape {explicit.shape} != {data.shape}")
            if not np.all((explicit == 0) | (explicit == 1)):
                raise ValueError(f"{mask_paths[v]}: mask must be 0/1")
            mask &= explicit.astype(bool)
        views.append(ViewMatrix(data, mask))
    labels = _read_labels(label_path) if label_path is not None else None
    return MultiViewDataset(tuple(views), labels)


def format_number(x) -> str:
    return "NaN" if np.isnan(x) else repr(float(x))


def write_matrix(path, M):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[None, :]
    with open(path, "w") as fh:
        for row in M:
            fh.write(",".join(format_number(x) for x in row))
            fh.write("\n")


def save_dataset(ds: MultiViewDataset, directory, prefix="view"):
    """Write ``<prefix><v>.csv`` per view (1-based) and ``labels.csv``.

    Returns the list of view paths and the label path (or None).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for v, view in enumerate(ds.views, 1):
        p = directory / f"{prefix}{v}.csv"
        write_matrix(p, view.data)
        paths.append(p)
    label_path = None
    if ds.labels is not None:
        label_path = directory / "labels.csv"
        label_path.write_text("".join(f"{int(y)}\n" for y in ds.labels))
    return paths, label_path


# ----------------------------------------------------------------- masking


def _check_ratio(m):
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"ratio m must be in [0, 1], got {m}")


def _drop_views(ds, m, rng):
    masks = [view.mask.copy() for view in ds.views]
    count = round_half_up(m * ds.n)
    if count == 0:
        return masks
    present = ds.present()
    eligible = np.flatnonzero(present.sum(axis=0) >= 2)
    if count > eligible.size:
        raise ValueError(
            f"need {count} samples with >= 2 views to drop one, only {eligible.size} exist"
        )
    chosen = rng.choice(eligible, size=count, replace=False)
    for i in np.sort(chosen):
        candidates = np.flatnonzero(present[:, i])
        v = candidates[rng.integers(candidates.size)]
        masks[v][:, i] = False
    return masks


def apply_missing_view_mask(ds: MultiViewDataset, m: float, seed) -> MultiViewDataset:
    """Drop one random view from ``round(m * n)`` random samples.

    Samples are drawn uniformly without replacement among those still present
    in at least two views; the dropped view is uniform among the views the
    sample still has.
    """
    _check_ratio(m)
    if ds.n_views == 1 and m > 0:
        raise ValueError("cannot drop views from a single-view dataset")
    if m == 0:
        return ds
    return ds.replace_masks(_drop_views(ds, m, make_rng(seed)))


def apply_incomplete_mask(ds: MultiViewDataset, m: float, seed) -> MultiViewDataset:
    """Missing views followed by random missing entries.

    Stage one is exactly :func:`apply_missing_view_mask` with the same seed.
    Stage two then, per view, removes ``round(m * N_v)`` entries uniformly,
    where ``N_v`` counts the observed entries in that view's columns that
    were not discarded in stage one. One random observed entry per sample is
    protected from stage two so no sample disappears entirely; the draw count
    is capped by the size of the unprotected pool (this only bites as m -> 1).
    """
    _check_ratio(m)
    if ds.n_views == 1 and m > 0:
        raise ValueError("cannot drop views from a single-view dataset")
    if m == 0:
        return ds
    rng = make_rng(seed)
    masks = _drop_views(ds, m, rng)

    # one protected observed entry per sample, chosen uniformly
    protected = [np.zeros_like(mk) for mk in masks]
    offsets = np.cumsum([0] + [mk.shape[0] for mk in masks])
    stacked = np.vstack(masks)
    for i in range(ds.n):
        rows = np.flatnonzero(stacked[:, i])
        if rows.size == 0:
            continue
        row = rows[rng.integers(rows.size)]
        v = int(np.searchsorted(offsets, row, side="right") - 1)
        protected[v][row - offsets[v], i] = True

    for v, mk in enumerate(masks):
        kept_cols = mk.any(axis=0)
        observed = mk & kept_cols[None, :]
        count = round_half_up(m * int(observed.sum()))
        pool = np.flatnonzero((observed & ~protected[v]).ravel())
        count = min(count, pool.size)
        if count:
            drop = rng.choice(pool, size=count, replace=False)
            flat = mk.ravel()
            flat[drop] = False
            masks[v] = flat.reshape(mk.shape)
    return ds.replace_masks(masks)


# --------------------------------------------------------------- synthetic


def synth_union_of_subspaces(
    k: int,
    subspace_dim: int,
    ambient_dims: Sequence[int],
    n_per_cluster: int,
    noise_sigma: float = 0.0,
    seed=0,
    center_scale: float = 4.0,
) -> MultiViewDataset:
    """Multi-view samples drawn from a union of ``k`` linear subspaces.

    Each cluster j has latent coordinates ``Y_j`` (subspace_dim x n_per_cluster)
    shared by all views, drawn as ``center_scale * c_j + N(0, I)`` around a
    cluster centre ``c_j ~ N(0, I)``. The centre lives in the same latent
    space, so the rank bound is unaffected. View v sees ``A_vj @ Y_j`` with
    its own Gaussian map ``A_vj`` (d_v x subspace_dim, entries
    N(0, 1/subspace_dim)), plus isotropic Gaussian noise. Columns are grouped by cluster; labels are 1..k.
    """
    ambient_dims = [int(d) for d in ambient_dims]
    if k < 1 or n_per_cluster < 1 or subspace_dim < 1 or not ambient_dims:
        raise ValueError("k, subspace_dim, n_per_cluster and ambient_dims must be positive")
    if subspace_dim >= min(ambient_dims):
        raise ValueError(
            f"subspace_dim={subspace_dim} must be < smallest ambient dim {min(ambient_dims)}"
        )
    if noise_sigma < 0 or center_scale < 0:
        raise ValueError("noise_sigma and center_scale must be >= 0")
    rng = make_rng(seed)
    latent = []
    for _ in range(k):
        centre = center_scale * rng.standard_normal((subspace_dim, 1))
        latent.append(centre + rng.standard_normal((subspace_dim, n_per_cluster)))
    views = []
    for d in ambient_dims:
        blocks = [
            rng.standard_normal((d, subspace_dim)) / np.sqrt(subspace_dim) @ Y
            for Y in latent
        ]
        X = np.hstack(blocks)
        if noise_sigma > 0:
            X = X + noise_sigma * rng.standard_normal(X.shape)
        views.append(ViewMatrix.full(X))
    labels = np.repeat(np.arange(1, k + 1), n_per_cluster)
    return MultiViewDataset(tuple(views), labels)
