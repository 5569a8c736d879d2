"""STPFormer traffic forecaster: graph attention with learned temporal and spatial pattern modules."""
import os

__version__ = "0.1.0"

# STPFORMER_THREADS caps BLAS/OpenMP workers; must be set before numpy loads.
if os.environ.get("STPFORMER_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["STPFORMER_THREADS"])
