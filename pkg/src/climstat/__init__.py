"""Two-scale climatological statistics for sparse point measurements."""

__version__ = "0.1.0"

from .grid import BoxKey, GridSpec, YearBoxKey, assign_box  # noqa: E402
from .ingest import BinnedStore, ingest_csv  # noqa: E402

__all__ = ["BinnedStore", "BoxKey", "GridSpec", "YearBoxKey", "assign_box", "ingest_csv", "__version__"]
