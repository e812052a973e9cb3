"""
Counter-seeded random streams.

Every draw in the toolkit comes from a ``SeededRng``. A stream is identified by
``(seed, stream, counter)``; numpy's ``SeedSequence`` hashes the triple into a
128-bit Philox key, and Philox is a counter-based generator whose output is
defined bit-for-bit independently of platform. Identical triples therefore
replay identical sequences everywhere.
"""
import zlib
from typing import Sequence, Union

import numpy as np


def stream_id(name: Union[str, int]) -> int:
    """Stable integer id for a named stream"""
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


class SeededRng:
    def __init__(self, seed: int, stream: Union[str, int] = 0, counter: int = 0):
        self.seed = int(seed)
        self.stream = stream_id(stream)
        self.counter = int(counter)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, self.counter))
        key = seq.generate_state(2, dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def derive(self, stream: Union[str, int], counter: int = 0) -> "SeededRng":
        """Child stream; independent of how many draws the parent made"""
        child_stream = (self.stream * 1_000_003 + stream_id(stream)) % (2 ** 32)
        return SeededRng(self.seed, child_stream, self.counter * 1_000_003 + counter)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high: int = None, size=None):
        """Integers in [low, high)"""
        return self.generator.integers(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def beta(self, a: float, b: float, size=None):
        return self.generator.beta(a, b, size)

    def dirichlet(self, alpha: Sequence[float]) -> np.ndarray:
        return self.generator.dirichlet(alpha)

    def bernoulli(self, p: float, size) -> np.ndarray:
        return self.generator.random(size) < p

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size=None, replace: bool = True):
        return self.generator.choice(n, size=size, replace=replace)

    def sign(self) -> int:
        return 1 if self.generator.random() < 0.5 else -1


def sample_seed(global_seed: int, epoch: int, sample_index: int) -> SeededRng:
    """Per-sample augmentation stream: hash(global_seed, epoch, sample_index)"""
    return SeededRng(global_seed, stream=f"augment-epoch-{epoch}", counter=sample_index)


def step_rng(global_seed: int, epoch: int, step: int) -> SeededRng:
    """Per-step training stream (shake-shake coefficients, DropBlock masks)"""
    return SeededRng(global_seed, stream=f"train-epoch-{epoch}", counter=step)
