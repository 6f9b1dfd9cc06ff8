"""Counter-based random streams.

Every random draw in the package goes through :class:`RngStream`, a thin
wrapper around NumPy's Philox-4x64 counter-based bit generator. A stream is
identified by ``(seed, stream_id)``: the seed fills the first key word and the
stream id the second, so distinct streams never share a key and therefore
never overlap. The 256-bit counter starts at zero (or at ``counter``, which
advances it by that many 4x64 blocks).

Stream ids used by the experiment pipelines are collected in :data:`STREAMS`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1

STREAMS = {
    "teacher": 1,
    "train_x": 2,
    "train_noise": 3,
    "test_x": 4,
    "init": 5,
    "power_iteration": 6,
    "probe": 7,
    "directions": 8,
    "subsample": 9,
    "cluster_train": 10,
    "cluster_test": 11,
    "cluster_signal": 12,
    "population": 13,
    "test_noise": 14,
}


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0
    counter: int = 0

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(key=[self.seed & MASK64, self.stream & MASK64])
        if self.counter:
            bitgen = bitgen.advance(self.counter)
        return np.random.Generator(bitgen)

    def child(self, name: str | int) -> "RngStream":
        """Stream for a named purpose; ``name`` may be a key of STREAMS or an int."""
        sid = STREAMS[name] if isinstance(name, str) else int(name)
        # mix the parent stream id into the upper bits so children of children stay distinct
        return RngStream(self.seed, ((self.stream & 0xFFFFFFFF) << 32) | sid)


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(0 if rng is None else int(rng)).generator()
