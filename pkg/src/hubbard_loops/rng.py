"""Counter-based random streams addressed by ``(seed, stream_id)``.

Every Monte Carlo estimator splits its samples into fixed-size chunks and
draws chunk ``c`` from ``stream(seed, c)``; the sample set therefore does not
depend on how chunks are spread over workers.
"""
from __future__ import annotations

import numpy as np

CHUNK = 1 << 15
_MASK = (1 << 64) - 1


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Philox generator keyed by the 64-bit seed and the stream id."""
    key = ((int(stream_id) & _MASK) << 64) | (int(seed) & _MASK)
    return np.random.Generator(np.random.Philox(key=key))


def chunk_sizes(samples: int, chunk: int = CHUNK) -> list[int]:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    full, rest = divmod(int(samples), chunk)
    return [chunk] * full + ([rest] if rest else [])


def exponential(rng: np.random.Generator, rate, size=None) -> np.ndarray:
    """Exponential holding times by inverse CDF, ``-log(1-U)/rate``."""
    u = rng.random(size if size is not None else np.shape(rate))
    return -np.log1p(-u) / rate
