import os

# must be set before numpy loads its BLAS
_threads = os.environ.get("SPLATDISTILL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

from .cli import main  # noqa: E402

main()
