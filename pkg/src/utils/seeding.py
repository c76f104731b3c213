"""Named random substreams derived from one experiment seed."""
from typing import Dict

import numpy as np

STREAM_NAMES = ("data", "init", "noise", "intervention", "shuffle")


def substream(seed: int, name: str) -> np.random.Generator:
    """
    Independent generator for one named purpose.

    Streams are keyed by position in STREAM_NAMES, so adding a consumer of one
    stream never shifts the values another stream produces.
    """
    if name not in STREAM_NAMES:
        raise ValueError(f"Unknown random stream '{name}'; expected one of {STREAM_NAMES}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(STREAM_NAMES.index(name),))
    return np.random.default_rng(sequence)


def substreams(seed: int) -> Dict[str, np.random.Generator]:
    return {name: substream(seed, name) for name in STREAM_NAMES}
