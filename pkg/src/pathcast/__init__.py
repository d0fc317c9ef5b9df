"""Next-community prediction for content spreading across online communities."""

import os as _os

_threads = _os.environ.get("PATHCAST_THREADS")
if _threads:
    # must be set before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .events import Corpus, DataError, PostingInstance, Split, chronological_split, ingest_events  # noqa: E402
from .autograd import NumericError  # noqa: E402
from .cig import build_cig, merge_weights, export_graph  # noqa: E402
from .config import TrainConfig, load_config  # noqa: E402

__all__ = [
    "Corpus",
    "DataError",
    "NumericError",
    "PostingInstance",
    "Split",
    "TrainConfig",
    "build_cig",
    "chronological_split",
    "export_graph",
    "ingest_events",
    "load_config",
    "merge_weights",
]
