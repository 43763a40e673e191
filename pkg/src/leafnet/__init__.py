"""From-scratch numpy CNN framework for leaf and seed image classification."""

import os as _os

if _os.environ.get("LEAFNET_DETERMINISTIC") == "1":
    # single-threaded BLAS gives a fixed reduction order; must be set before numpy loads
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = "1"

__version__ = "0.1.0"
