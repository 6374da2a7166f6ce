"""
Named, independently seeded random streams.
"""

import zlib
from typing import Dict

import numpy as np

STREAMS = ("init", "batch", "vgae_noise", "gate_noise", "view_sampling", "negatives", "edge_drop")


def stable_hash(name: str) -> int:
    """Process-independent 32-bit hash of a stream name."""
    return zlib.crc32(name.encode("utf-8"))


def make_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), stable_hash(name)])


class RngStreams:
    """
    One Generator per stream name, all derived from a single seed.

    Unknown names are created on first access, so every draw in a run is
    attributable to a named stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {name: make_stream(seed, name) for name in STREAMS}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = make_stream(self.seed, name)
        return self._streams[name]

    def __getattr__(self, name: str) -> np.random.Generator:
        if name.startswith("_"):
            raise AttributeError(name)
        return self[name]

    def state(self) -> Dict[str, dict]:
        """Bit-generator states, for checkpoint metadata."""
        return {name: stream.bit_generator.state for name, stream in self._streams.items()}

    def restore(self, states: Dict[str, dict]) -> None:
        for name, state in states.items():
            self[name].bit_generator.state = state
