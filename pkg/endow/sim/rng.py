"""Counter-based random substreams, one per chunk of paths."""

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChunkStreams:
    hedge: np.random.Generator  # drives B1
    endowed: np.random.Generator  # drives the independent part of B2


def make_streams(seed: int, chunk: int) -> ChunkStreams:
    """Independent Philox streams for chunk `chunk` of a run seeded with `seed`."""
    root = np.random.SeedSequence([seed, chunk])
    ss_hedge, ss_endowed = root.spawn(2)
    return ChunkStreams(
        hedge=np.random.Generator(np.random.Philox(ss_hedge)),
        endowed=np.random.Generator(np.random.Philox(ss_endowed)),
    )


def chunk_sizes(npaths: int, chunk_size: int) -> Iterator[tuple[int, int]]:
    """(chunk index, number of paths) covering npaths."""
    chunk = 0
    done = 0
    while done < npaths:
        size = min(chunk_size, npaths - done)
        yield chunk, size
        done += size
        chunk += 1


class BrownianDriver:
    """Increments (dB1, dB2) with dB2 = rho dB1 + sqrt(1 - rho^2) dBperp.

    With `substeps` > 1 each increment is the sum of that many finer draws, so a run at
    dt and one at dt/substeps see the same Brownian path. `zero=True` returns zero
    increments (deterministic driver).
    """

    def __init__(self, streams: ChunkStreams | None, rho: float, dt: float, npaths: int,
                 zero: bool = False, substeps: int = 1):
        self.streams = streams
        self.rho = rho
        self.substeps = substeps
        self.sqdt = float(np.sqrt(dt / substeps))
        self.npaths = npaths
        self.zero = zero or streams is None

    def _draw(self, gen: np.random.Generator) -> np.ndarray:
        if self.substeps == 1:
            return gen.standard_normal(self.npaths) * self.sqdt
        return gen.standard_normal((self.substeps, self.npaths)).sum(axis=0) * self.sqdt

    def step(self) -> tuple[np.ndarray, np.ndarray]:
        if self.zero:
            z = np.zeros(self.npaths)
            return z, z.copy()
        assert self.streams is not None
        dB1 = self._draw(self.streams.hedge)
        dBp = self._draw(self.streams.endowed)
        return dB1, self.rho * dB1 + np.sqrt(1.0 - self.rho**2) * dBp
