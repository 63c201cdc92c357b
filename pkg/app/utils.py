"""
Shared utility functions for netglm.
"""

import re
import logging

import numpy as np
from pydantic import ValidationError

from app.errors import ArgumentError

# Get logger
logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix_seed(seed: int, stream: int) -> int:
    """
    Derive an independent 64-bit seed for a sub-stream (replicate, grid point).

    SplitMix64 finalizer applied to seed + (stream + 1) * golden gamma, so
    stream 0 never reproduces the parent seed.

    Args:
        seed: Parent seed (any integer, reduced mod 2^64)
        stream: Sub-stream index (replicate number, grid row, ...)

    Returns:
        64-bit unsigned integer seed

    Examples:
        >>> mix_seed(7, 0) == mix_seed(7, 0)
        True
        >>> mix_seed(7, 0) != mix_seed(7, 1)
        True
    """
    z = (int(seed) + (int(stream) + 1) * _GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) seeded with a 64-bit integer."""
    return np.random.Generator(np.random.Philox(int(seed) & _MASK64))


def parse_indices(spec: str) -> list[int]:
    """
    Parse a coordinate list like "0,3,5-8" into sorted unique integers.

    Args:
        spec: Comma-separated integers and inclusive ranges

    Returns:
        Sorted list of unique non-negative indices

    Examples:
        >>> parse_indices("0,3,5-8")
        [0, 3, 5, 6, 7, 8]
        >>> parse_indices("2, 2,1")
        [1, 2]
    """
    indices: set[int] = set()

    for token in re.split(r'[,\s]+', spec.strip()):
        if not token:
            continue
        match = re.fullmatch(r'(\d+)-(\d+)', token)
        if match:
            lo, hi = int(match.group(1)), int(match.group(2))
            if hi < lo:
                raise ArgumentError(f"Invalid index range '{token}'")
            indices.update(range(lo, hi + 1))
        elif token.isdigit():
            indices.add(int(token))
        else:
            raise ArgumentError(f"Invalid index '{token}'")

    if not indices:
        raise ArgumentError("Empty index list")
    return sorted(indices)


def format_validation_error(e: ValidationError) -> str:
    """
    Reduce a pydantic ValidationError to one actionable line.

    Examples:
        "reps: Input should be greater than or equal to 1, received 0 (int)"
    """
    errors = e.errors()
    if not errors:
        return str(e)
    err = errors[0]
    loc = err.get('loc', ())
    param = ".".join(str(part) for part in loc) if loc else 'unknown'
    msg = err.get('msg', 'validation error')
    input_val = err.get('input')
    return f"{param}: {msg}, received {input_val} ({type(input_val).__name__})"
