"""Named deterministic random streams.

Every source of randomness in the pipeline is a stream derived from the single
run seed plus a string name, so stages can be re-run independently without
perturbing each other and a whole run is reproducible bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def child_seed(seed: int, name: str) -> int:
    """Derive a 63-bit seed for the stream `name` from the run seed."""
    digest = hashlib.blake2b(f"{seed}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def numpy_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, name))


def torch_stream(seed: int, name: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(child_seed(seed, name))
    return gen
