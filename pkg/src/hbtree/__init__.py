"""HB-family authentication and key-tree private identification over GF(2)."""
from .gf2 import BitMatrix, BitVector, DimensionError, ToeplitzMatrix
from .hb import HbPlusKeys, HbSharpKeys, ProtocolParams, Verdict
from .stream import SeededStream
from .tree import (
    MasterSecret,
    ProtocolOutcome,
    TagCredential,
    TraversalMessage,
    TreeDirectory,
    run_protocol_iterated,
    run_protocol_once,
    setup_system,
)

__version__ = "0.1.0"

__all__ = [
    "BitMatrix",
    "BitVector",
    "DimensionError",
    "HbPlusKeys",
    "HbSharpKeys",
    "MasterSecret",
    "ProtocolOutcome",
    "ProtocolParams",
    "SeededStream",
    "TagCredential",
    "ToeplitzMatrix",
    "TraversalMessage",
    "TreeDirectory",
    "Verdict",
    "run_protocol_iterated",
    "run_protocol_once",
    "setup_system",
]
