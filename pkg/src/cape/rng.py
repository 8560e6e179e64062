"""Named, versioned random streams.

Every stochastic subsystem draws from its own counter-based Philox stream
keyed by (seed, stream id), so consuming randomness in one subsystem can
never perturb another.  That independence is what makes matched-seed policy
comparisons and history replay exact: a replay skips query selection (the
"policy" stream) without shifting the resample or rejuvenation streams.
"""

from __future__ import annotations

import numpy as np

RNG_SCHEME = "cape-philox-v1"

STREAMS = {
    "prior": 1,
    "oracle": 2,
    "resample": 3,
    "rejuvenate": 4,
    "policy": 5,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """The named Philox stream for a session seed."""
    if name not in STREAMS:
        raise ValueError(f"unknown rng stream {name!r}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.Philox(seq))


def session_streams(seed: int) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in STREAMS}


def generator_state(gen: np.random.Generator) -> dict:
    """JSON-safe snapshot of a generator's full state."""
    raw = gen.bit_generator.state
    state = dict(raw)
    inner = dict(raw["state"])
    inner["counter"] = [int(v) for v in inner["counter"]]
    inner["key"] = [int(v) for v in inner["key"]]
    state["state"] = inner
    state["buffer"] = [int(v) for v in raw["buffer"]]
    return state


def restore_generator(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.Philox())
    restored = dict(state)
    inner = dict(state["state"])
    inner["counter"] = np.array(inner["counter"], dtype=np.uint64)
    inner["key"] = np.array(inner["key"], dtype=np.uint64)
    restored["state"] = inner
    restored["buffer"] = np.array(state["buffer"], dtype=np.uint64)
    gen.bit_generator.state = restored
    return gen
