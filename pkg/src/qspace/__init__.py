"""Hardware-aware search for quantization-friendly NAS search spaces."""
from .archspace import (
    Architecture,
    BlockType,
    Hyperspace,
    SearchSpace,
    decode_space,
    encode_space,
    max_architecture,
    min_architecture,
    sample_architecture,
    space_cardinality,
)

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "BlockType",
    "Hyperspace",
    "SearchSpace",
    "decode_space",
    "encode_space",
    "max_architecture",
    "min_architecture",
    "sample_architecture",
    "space_cardinality",
]
