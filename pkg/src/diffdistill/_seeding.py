"""Seed derivation and worker-count helpers."""

from __future__ import annotations

import os

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX = 0xBF58476D1CE4E5B9

# stream index reserved for the DDPM-forward noise of a class
DDPM_NOISE_STREAM = 0xFFFFFFFF


def splitmix64(x: int) -> int:
    """Finalizer of the splitmix64 generator (a bijection on 64-bit ints)."""
    z = x & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derived_seed(seed: int, i: int, j: int = 0) -> int:
    """Order-independent child seed for stream ``(i, j)`` of ``seed``.

    ``i`` is the class index and ``j`` the candidate index when used by the
    group sampler.
    """
    x = (seed & _MASK) ^ ((i * _GOLDEN) & _MASK) ^ ((j * _MIX) & _MASK)
    return splitmix64(x)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & _MASK))


def worker_count() -> int:
    """Threads allowed by ``D3HR_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("D3HR_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n
