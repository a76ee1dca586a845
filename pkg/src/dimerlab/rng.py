"""Seed management: one counter-based stream per labelled component.

Streams are derived from a master seed by labelled splitting, so that the
dynamics, the initial condition and the noise of every replica are
independent and individually reproducible.  Compiled kernels take a plain
integer seed drawn from such a stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(labels) -> list[int]:
    out = []
    for lab in labels:
        if isinstance(lab, (int, np.integer)):
            out.append(int(lab) & 0xFFFFFFFF)
        else:
            out.append(zlib.crc32(str(lab).encode()))
    return out


def stream(seed: int, *labels) -> np.random.Generator:
    """Philox generator for the component named by ``labels`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_key(labels)))
    return np.random.Generator(np.random.Philox(ss))


def kernel_seed(seed: int, *labels) -> int:
    """31-bit integer seed for a compiled kernel call."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label_key(labels)))
    return int(ss.generate_state(1, dtype=np.uint32)[0] & 0x7FFFFFFF)
