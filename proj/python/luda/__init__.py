"""LSM key-value store whose compactions run on a modeled offload device."""

from ._core import (
    Corruption,
    Error,
    InvalidArgument,
    LatencyRecorder,
    Store,
    StoreClosed,
    WriteStall,
    bench,
    build_sst,
    compare_engines,
    read_sst,
)

__all__ = [
    "Corruption",
    "Error",
    "InvalidArgument",
    "LatencyRecorder",
    "Store",
    "StoreClosed",
    "WriteStall",
    "bench",
    "build_sst",
    "compare_engines",
    "read_sst",
]
