"""Counter-based random streams (Philox 4x64).

A stream is identified by a 64-bit key; the value at position ``p`` depends
only on ``(key, p)``, so draws are reproducible in any traversal order.
Position ``p`` maps to word ``p % 4`` of counter block ``p // 4``.
"""

import numpy as np

_WORDS = 4


def _generator(key: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(key), counter=[int(block), 0, 0, 0]))


def uniform_block(key: int, start: int, n: int) -> np.ndarray:
    """Uniform [0, 1) doubles at stream positions ``start .. start + n - 1``."""
    if n <= 0:
        return np.empty(0)
    first, last = start // _WORDS, (start + n - 1) // _WORDS
    words = _generator(key, first).random(_WORDS * (last - first + 1))
    offset = start - first * _WORDS
    return words[offset:offset + n]


def stream(key: int, substream: int = 0) -> np.random.Generator:
    """Generator for bulk sampling; ``substream`` selects the second counter word."""
    return np.random.Generator(np.random.Philox(key=int(key), counter=[0, int(substream), 0, 0]))
