"""Environment and sub-goal rewards.

The environment pays only at the end of an episode: +1 on success, -1 on
failure, 0 on every earlier turn. The low-level reward scores a generated
response by retrieving the k offline reference responses whose (state,
sub-goal) keys are nearest to the query under cosine distance and averaging
the smoothed sentence BLEU against each.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .corpus import FAILURE, SUCCESS, DialogueState, TokenSeq
from .metrics import bleu
from .subgoals import LabeledPair, SubGoal

log = logging.getLogger(__name__)


def terminal_reward(outcome: str) -> float:
    """+1 for an accomplished goal, -1 otherwise."""
    if outcome == SUCCESS:
        return 1.0
    if outcome == FAILURE:
        return -1.0
    raise ValueError(f"unknown outcome {outcome!r}")


class StateKeyEmbedder:
    """Frozen map from (state, sub-goal) to the retrieval key.

    The state part is the mean of the (snapshotted) worker word embeddings
    over the last human utterance's non-pad tokens, normalized to unit
    length; the sub-goal part is the scaled one-hot block.
    """

    def __init__(self, embedding_matrix: np.ndarray, num_subgoals: int, subgoal_scale: float = 1.0):
        self.embedding = np.array(embedding_matrix, dtype=np.float64, copy=True)
        self.embedding.setflags(write=False)
        self.num_subgoals = num_subgoals
        self.subgoal_scale = subgoal_scale

    @property
    def key_dim(self) -> int:
        return self.embedding.shape[1] + self.num_subgoals

    def state_key(self, state: DialogueState) -> np.ndarray:
        last = state.history[-1].tokens
        if last is None:
            raise ValueError("state utterances must be encoded")
        ids = last.tokens()
        if ids.size == 0:
            ids = np.array([1])  # UNK for an empty utterance
        vec = self.embedding[ids].mean(axis=0)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def key(self, state: DialogueState, subgoal: SubGoal) -> np.ndarray:
        if subgoal.dim != self.num_subgoals:
            raise ValueError("sub-goal dimension mismatch")
        return np.concatenate([self.state_key(state), self.subgoal_scale * subgoal.onehot])


@dataclass
class NeighborIndex:
    """Exhaustive-scan retrieval table: one key row per offline labeled pair."""

    keys: np.ndarray = field(repr=False)  # (N, key_dim)
    payloads: list[TokenSeq] = field(repr=False)
    k: int = 5

    def __post_init__(self):
        if self.keys.ndim != 2 or self.keys.shape[0] != len(self.payloads):
            raise ValueError("one key row per payload required")
        if self.keys.shape[0] == 0:
            raise ValueError("empty reference index")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def __len__(self) -> int:
        return self.keys.shape[0]

    def save(self, index_path: str | Path, payload_path: str | Path) -> None:
        checkpoint.save_arrays(index_path, {"keys": self.keys}, meta={"kind": "neighbor_index", "k": self.k})
        with Path(payload_path).open("w", encoding="utf-8") as fh:
            for seq in self.payloads:
                fh.write(json.dumps({"ids": seq.tokens().tolist(), "width": seq.width}) + "\n")

    @classmethod
    def load(cls, index_path: str | Path, payload_path: str | Path) -> "NeighborIndex":
        arrays, meta = checkpoint.load_arrays(index_path)
        payloads = []
        with Path(payload_path).open(encoding="utf-8") as fh:
            for line in fh:
                obj = json.loads(line)
                ids = np.zeros(obj["width"], dtype=np.int64)
                ids[: len(obj["ids"])] = obj["ids"]
                payloads.append(TokenSeq(ids=ids, real_length=len(obj["ids"])))
        return cls(keys=arrays["keys"], payloads=payloads, k=int(meta["k"]))


def build_reference_index(
    pairs: list[LabeledPair], embedder: StateKeyEmbedder, k: int = 5
) -> NeighborIndex:
    """Key every labeled pair's (state, sub-goal); payload is its response."""
    if not pairs:
        raise ValueError("no labeled pairs to index")
    keys = np.stack([embedder.key(p.state, p.subgoal) for p in pairs])
    payloads = []
    for p in pairs:
        if p.target.tokens is None:
            raise ValueError("targets must be encoded")
        payloads.append(p.target.tokens)
    return NeighborIndex(keys=keys, payloads=payloads, k=k)


def cosine_distances(keys: np.ndarray, query: np.ndarray) -> np.ndarray:
    """1 - cosine similarity against each row; zero vectors get distance 1."""
    q_norm = np.linalg.norm(query)
    row_norms = np.linalg.norm(keys, axis=1)
    denom = row_norms * q_norm
    sims = np.where(denom > 0, keys @ query / np.where(denom > 0, denom, 1.0), 0.0)
    return 1.0 - sims


def nearest_references(
    index: NeighborIndex, query_key: np.ndarray, k: int | None = None
) -> list[TokenSeq]:
    """The k payloads at smallest cosine distance; ties keep insertion order."""
    k = index.k if k is None else k
    if k > len(index):
        raise ValueError(f"k={k} exceeds index size {len(index)}")
    dists = cosine_distances(index.keys, query_key)
    order = np.argsort(dists, kind="stable")[:k]
    return [index.payloads[i] for i in order]


def worker_reward(
    index: NeighborIndex,
    embedder: StateKeyEmbedder,
    state: DialogueState,
    subgoal: SubGoal,
    generated: TokenSeq,
    k: int | None = None,
) -> float:
    """Mean smoothed sentence BLEU of the generation against the k retrieved
    references; an empty generation scores 0."""
    if generated.real_length == 0:
        log.warning("empty generation: worker reward 0")
        return 0.0
    refs = nearest_references(index, embedder.key(state, subgoal), k)
    cand = generated.tokens().tolist()
    scores = [bleu(cand, [ref.tokens().tolist()]) for ref in refs]
    return float(np.mean(scores))
