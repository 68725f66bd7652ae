"""Seed handling.

Every pipeline stage draws from its own PCG64 substream, keyed by
SeedSequence([seed, stage, *extra]). Stage codes are fixed integers so
adding a stage never perturbs the others.
"""
import numpy as np

STAGES = {
    "source": 1,
    "fiber": 2,
    "conversion": 3,
    "detector-trigger": 4,
    "detector-probe": 5,
    "hbt": 6,
    "detector-p1": 7,
    "detector-p2": 8,
    "sweep": 9,
}


def stage_rng(seed, stage, *extra):
    """Generator for a named stage; `extra` integers select sub-streams (e.g. chunks)."""
    code = STAGES[stage] if isinstance(stage, str) else int(stage)
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, code, *map(int, extra)])
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, index):
    """Deterministic child seed for sweep point `index`."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, STAGES["sweep"], int(index)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def sub_seed(seed, stage, *extra):
    """Integer seed for a stage sub-stream, for functions that take a plain seed."""
    code = STAGES[stage] if isinstance(stage, str) else int(stage)
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 1000 + code, *map(int, extra)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
