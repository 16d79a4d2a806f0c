"""Counter-based random streams.

Every random draw in the project is keyed by (seed, stream id, counter).
The same triple always yields the same values, on any machine, in any
process, regardless of how many other streams were consumed in between.
This is what makes training runs and decision-rule evaluations
bit-reproducible independent of execution order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Reserved stream-id prefixes, one per consumer. Keeping them disjoint
# guarantees e.g. batch-index sampling never shares draws with deformation
# sampling.
STREAM_INIT = 0
STREAM_BATCH_INDICES = 1
STREAM_TRAIN_DEFORM = 2
STREAM_DECISION = 3
STREAM_SPLIT = 4
STREAM_ELASTIC_FIELD = 5


def generator_for(seed: int, stream: tuple[int, ...], counter: int) -> np.random.Generator:
    """Fresh Philox generator keyed by (seed, stream, counter)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(stream) + (counter,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class RngStream:
    """A named sequence of independent generators.

    ``at(counter)`` is pure; ``next()`` advances the internal counter.
    Distinct stream ids under the same seed are statistically independent.
    """

    seed: int
    stream: tuple[int, ...]
    counter: int = field(default=0)

    def at(self, counter: int) -> np.random.Generator:
        return generator_for(self.seed, self.stream, counter)

    def next(self) -> np.random.Generator:
        g = self.at(self.counter)
        self.counter += 1
        return g

    def substream(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(ids))
