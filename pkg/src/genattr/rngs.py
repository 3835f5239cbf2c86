"""Counter-based random streams.

Every sampled path owns a Philox stream addressed by (seed, phase, path).
Streams are derived by jumping, not by drawing, so results are identical no
matter how paths are distributed over workers or in what order tables merge.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Phase indices are packed above the path index; keeps one flat jump space.
_PHASE_STRIDE = 1 << 32


def path_rng(seed: int, path_index: int, phase: int = 0) -> np.random.Generator:
    """Return the generator for one sampled path.

    The stream sits at Philox counter block (phase, path): bit-equal to
    Philox(key=seed).jumped(phase * 2**32 + path_index), but cheaper to
    construct. phase 0 is shared by the flat samplers and the coarse pass of
    the hierarchical sampler; equal (seed, phase, path) triples yield
    bit-equal draws, which is what makes one-level hierarchical runs
    reproduce the flat sampler exactly.
    """
    if path_index < 0 or phase < 0:
        raise ValueError("path_index and phase must be non-negative")
    bits = np.random.Philox(key=seed, counter=[0, 0, phase * _PHASE_STRIDE + path_index, 0])
    return np.random.Generator(bits)


def derive_seed(seed: int, *key: int | str) -> int:
    """Fold a structured key into a fresh 63-bit seed (record ids, CLI runs).

    String parts are digested to stable 32-bit words first; SeedSequence
    spawn keys only take integers, and the process hash seed must not leak
    into results."""
    parts = tuple(
        int.from_bytes(hashlib.blake2s(k.encode("utf-8"), digest_size=4).digest(), "big")
        if isinstance(k, str)
        else int(k)
        for k in key
    )
    ss = np.random.SeedSequence(entropy=seed, spawn_key=parts)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
