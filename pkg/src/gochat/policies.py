"""High-level sub-goal policy and the state-value networks.

The manager maps the encoded dialogue state to a categorical distribution
over sub-goals through a single affine head. The critic maps the same kind
of encoding (through its own, independent encoder) to a scalar value, and
keeps a frozen target copy that is hard-synced on a fixed schedule.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import EncoderConfig
from .corpus import DialogueState
from .encoders import DialogueEncoder
from .rng import child_seed
from .subgoals import SubGoal
from .torchutil import DTYPE, load_module, save_module

PROB_FLOOR = 1e-12


class SubgoalPolicy(nn.Module):
    def __init__(self, vocab_size: int, cfg: EncoderConfig, num_subgoals: int, seed: int = 0):
        super().__init__()
        self.num_subgoals = num_subgoals
        self.encoder = DialogueEncoder(vocab_size, cfg, seed=child_seed(seed, "manager-encoder"))
        self.head = nn.Linear(cfg.d_dlg, num_subgoals)
        self.head.to(DTYPE)
        gen = torch.Generator()
        gen.manual_seed(child_seed(seed, "manager-head"))
        with torch.no_grad():
            for _, p in sorted(self.head.named_parameters(), key=lambda kv: kv[0]):
                p.uniform_(-0.08, 0.08, generator=gen)

    def probs(self, state: DialogueState) -> torch.Tensor:
        """Categorical head: softmax of the affine map of the state vector."""
        return self.probs_batch([state])[0]

    def probs_batch(self, states: list[DialogueState]) -> torch.Tensor:
        h = self.encoder.encode_states_batch(states)  # (B, d_dlg)
        return torch.softmax(self.head(h), dim=-1)

    def log_prob(self, state: DialogueState, subgoal: SubGoal) -> torch.Tensor:
        return self.log_prob_batch([state], [subgoal])[0]

    def log_prob_batch(self, states: list[DialogueState], subgoals: list[SubGoal]) -> torch.Tensor:
        probs = self.probs_batch(states)
        idx = torch.tensor([g.index for g in subgoals], dtype=torch.long)
        picked = probs.gather(1, idx.unsqueeze(1)).squeeze(1)
        return torch.log(picked.clamp_min(PROB_FLOOR))


def sample_subgoal(probs: torch.Tensor, rng: torch.Generator) -> SubGoal:
    """Categorical draw from a probability vector; deterministic given rng state."""
    probs = probs.detach()
    if probs.dim() != 1 or probs.min() < 0 or abs(float(probs.sum()) - 1.0) > 1e-6:
        raise ValueError("probs must be a probability vector")
    idx = int(torch.multinomial(probs, 1, generator=rng))
    return SubGoal(index=idx, dim=probs.shape[0])


def greedy_subgoal(probs: torch.Tensor) -> SubGoal:
    """Argmax selection; ties go to the lowest index."""
    probs = probs.detach()
    return SubGoal(index=int(torch.argmax(probs)), dim=probs.shape[0])


class ValueNetwork(nn.Module):
    """Scalar state value with a frozen target copy of the same shape."""

    def __init__(self, vocab_size: int, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        self.live = _ValueHalf(vocab_size, cfg, seed=child_seed(seed, "critic-live"))
        self.target = _ValueHalf(vocab_size, cfg, seed=child_seed(seed, "critic-live"))
        for p in self.target.parameters():
            p.requires_grad_(False)
        self.sync_target()

    def value(self, state: DialogueState, use_target: bool = False) -> torch.Tensor:
        return self.values_batch([state], use_target=use_target)[0]

    def values_batch(self, states: list[DialogueState], use_target: bool = False) -> torch.Tensor:
        half = self.target if use_target else self.live
        return half(states)

    def sync_target(self) -> None:
        """Hard copy live -> target; idempotent."""
        with torch.no_grad():
            live = dict(self.live.named_parameters())
            for name, p in self.target.named_parameters():
                p.copy_(live[name])

    def trainable_parameters(self):
        return self.live.parameters()


class _ValueHalf(nn.Module):
    def __init__(self, vocab_size: int, cfg: EncoderConfig, seed: int):
        super().__init__()
        self.encoder = DialogueEncoder(vocab_size, cfg, seed=child_seed(seed, "encoder"))
        self.head = nn.Linear(cfg.d_dlg, 1)
        self.head.to(DTYPE)
        gen = torch.Generator()
        gen.manual_seed(child_seed(seed, "head"))
        with torch.no_grad():
            for _, p in sorted(self.head.named_parameters(), key=lambda kv: kv[0]):
                p.uniform_(-0.08, 0.08, generator=gen)

    def forward(self, states: list[DialogueState]) -> torch.Tensor:
        h = self.encoder.encode_states_batch(states)
        return self.head(h).squeeze(-1)  # (B,)


class OutcomeClassifier(nn.Module):
    """Dialogue-level binary success classifier (sigmoid head over the encoder)."""

    def __init__(self, vocab_size: int, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        self.encoder = DialogueEncoder(vocab_size, cfg, seed=child_seed(seed, "judge-encoder"))
        self.head = nn.Linear(cfg.d_dlg, 1)
        self.head.to(DTYPE)
        gen = torch.Generator()
        gen.manual_seed(child_seed(seed, "judge-head"))
        with torch.no_grad():
            for _, p in sorted(self.head.named_parameters(), key=lambda kv: kv[0]):
                p.uniform_(-0.08, 0.08, generator=gen)

    def success_logit(self, histories) -> torch.Tensor:
        h = self.encoder.encode_histories(histories)
        return self.head(h).squeeze(-1)

    def success_prob(self, history) -> float:
        with torch.no_grad():
            return float(torch.sigmoid(self.success_logit([history]))[0])


# ---- checkpoint plumbing ----


def save_manager(path, manager: SubgoalPolicy, meta: dict) -> None:
    save_module(path, manager, "manager.", {"kind": "manager", **meta})


def load_manager(path, manager: SubgoalPolicy) -> dict:
    return load_module(path, manager, "manager.")


def save_critic(path, critic: ValueNetwork, meta: dict) -> None:
    from .checkpoint import save_arrays
    from .torchutil import named_arrays

    arrays = named_arrays(critic.live, "critic.")
    arrays.update(named_arrays(critic.target, "critic_target."))
    save_arrays(path, arrays, meta={"kind": "critic", **meta})


def load_critic(path, critic: ValueNetwork) -> dict:
    from .checkpoint import load_arrays
    from .torchutil import load_named_arrays

    arrays, meta = load_arrays(path)
    load_named_arrays(critic.live, arrays, "critic.")
    load_named_arrays(critic.target, arrays, "critic_target.")
    return meta


def save_judge(path, judge: OutcomeClassifier, meta: dict) -> None:
    save_module(path, judge, "judge.", {"kind": "judge", **meta})


def load_judge(path, judge: OutcomeClassifier) -> dict:
    return load_module(path, judge, "judge.")
