"""Incomplete multi-view learning by joint embedding and low-rank approximation.

Subpackages and modules:

* :mod:`jella.mvdata` -- datasets, CSV I/O, masking, synthetic generators
* :mod:`jella.numerics` -- linear-algebra kernels
* :mod:`jella.framework` -- generic alternating-minimization drivers
* :mod:`jella.solvers` -- IML-BDR, PVC, MVL-IV
* :mod:`jella.clusteval` -- k-means and clustering / reconstruction metrics
* :mod:`jella.cli` -- experiment harness (``jella`` console script)
"""

__version__ = "0.1.0"
