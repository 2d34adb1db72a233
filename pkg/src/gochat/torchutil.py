"""Shared torch helpers: deterministic init, token batching, checkpoint glue.

All models run on CPU in float64 so that training logs, checkpoints, and
gradient checks are reproducible bit for bit.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .checkpoint import load_arrays, save_arrays
from .corpus import UNK_ID, TokenSeq
from .rng import torch_stream

DTYPE = torch.float64


def init_uniform(module: nn.Module, seed: int, scale: float = 0.08) -> None:
    """Fill every parameter with uniform(-scale, scale), in sorted name order."""
    gen = torch_stream(seed, "init")
    with torch.no_grad():
        for _, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            param.uniform_(-scale, scale, generator=gen)


def token_matrix(seqs: list[TokenSeq]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack token sequences into (B, L) ids plus (B,) lengths.

    Empty sequences are encoded as a single UNK token so every row has at
    least one real position.
    """
    lengths = [max(s.real_length, 1) for s in seqs]
    width = max(lengths)
    ids = torch.zeros(len(seqs), width, dtype=torch.long)
    for i, s in enumerate(seqs):
        if s.real_length == 0:
            ids[i, 0] = UNK_ID
        else:
            ids[i, : s.real_length] = torch.from_numpy(s.tokens())
    return ids, torch.tensor(lengths, dtype=torch.long)


def length_mask(lengths: torch.Tensor, width: int) -> torch.Tensor:
    """(B, width) boolean mask of valid positions."""
    return torch.arange(width).unsqueeze(0) < lengths.unsqueeze(1)


def named_arrays(module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Flattened, named view of the module's parameters as numpy arrays."""
    out = {}
    for name, param in module.named_parameters():
        out[f"{prefix}{name}"] = param.detach().numpy().copy()
    return out


def load_named_arrays(module: nn.Module, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    with torch.no_grad():
        for name, param in module.named_parameters():
            key = f"{prefix}{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint missing parameter {key}")
            value = torch.from_numpy(np.ascontiguousarray(arrays[key]))
            if value.shape != param.shape:
                raise ValueError(f"shape mismatch for {key}: {tuple(value.shape)} vs {tuple(param.shape)}")
            param.copy_(value)


def save_module(path, module: nn.Module, prefix: str, meta: dict) -> None:
    save_arrays(path, named_arrays(module, prefix), meta=meta)


def load_module(path, module: nn.Module, prefix: str) -> dict:
    arrays, meta = load_arrays(path)
    load_named_arrays(module, arrays, prefix)
    return meta
