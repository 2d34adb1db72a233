"""Offline sub-goal discovery: LDA over chatbot response bags of words.

Each chatbot turn of the corpus is treated as one document (the response
utterance only; the conditioning state is not clustered). A collapsed Gibbs
sampler fits the topic model; each (state, response) pair is then labeled
with the one-hot argmax of the response's document-topic posterior. These
hard labels feed manager pretraining and the worker-reward reference index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .corpus import BOS_ID, EOS_ID, PAD_ID, Dialogue, DialogueState, TokenSeq, Utterance, state_at
from .rng import numpy_stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubGoal:
    """One-hot sub-goal vector; `degenerate` marks fallback assignments."""

    index: int
    dim: int
    degenerate: bool = False

    def __post_init__(self):
        if not 0 <= self.index < self.dim:
            raise ValueError(f"sub-goal index {self.index} outside dimension {self.dim}")

    @property
    def onehot(self) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        vec[self.index] = 1.0
        return vec


@dataclass(frozen=True)
class LabeledPair:
    state: DialogueState
    subgoal: SubGoal
    target: Utterance
    dialogue_id: str
    turn: int


@dataclass(frozen=True)
class TopicModel:
    num_topics: int
    topic_word: np.ndarray = field(repr=False)  # (K, V), rows sum to 1
    topic_weight: np.ndarray = field(repr=False)  # (K,), corpus-level mixing proportions
    alpha_doc: float
    beta_word: float
    seed: int

    def __post_init__(self):
        if self.num_topics < 2:
            raise ValueError("need at least 2 topics")
        sums = self.topic_word.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ValueError("topic rows must sum to 1")

    def save(self, path) -> None:
        checkpoint.save_arrays(
            path,
            {"topic_word": self.topic_word, "topic_weight": self.topic_weight},
            meta={
                "kind": "topic_model",
                "num_topics": self.num_topics,
                "alpha_doc": self.alpha_doc,
                "beta_word": self.beta_word,
                "seed": self.seed,
            },
        )

    @classmethod
    def load(cls, path) -> "TopicModel":
        arrays, meta = checkpoint.load_arrays(path)
        return cls(
            num_topics=int(meta["num_topics"]),
            topic_word=arrays["topic_word"],
            topic_weight=arrays["topic_weight"],
            alpha_doc=float(meta["alpha_doc"]),
            beta_word=float(meta["beta_word"]),
            seed=int(meta["seed"]),
        )


_EXCLUDED_IDS = (PAD_ID, BOS_ID, EOS_ID)


def _bag_of_words(seq: TokenSeq) -> list[int]:
    return [int(i) for i in seq.tokens() if int(i) not in _EXCLUDED_IDS]


def fit_lda(
    pairs: list[tuple[DialogueState, Utterance]],
    vocab_size: int,
    num_topics: int = 14,
    iters: int = 200,
    seed: int = 0,
    alpha_doc: float = 0.1,
    beta_word: float = 0.01,
) -> TopicModel:
    """Collapsed Gibbs sampling over response bags of words; seed-deterministic."""
    if not pairs:
        raise ValueError("no pairs to cluster")
    if num_topics < 2 or iters < 1:
        raise ValueError("need num_topics >= 2 and iters >= 1")
    docs = []
    for _, target in pairs:
        if target.tokens is None:
            raise ValueError("targets must be encoded before clustering")
        docs.append(_bag_of_words(target.tokens))
    if all(len(d) == 0 for d in docs):
        raise ValueError("all documents are empty")

    rng = numpy_stream(seed, "lda-gibbs")
    K, V = num_topics, vocab_size
    n_kw = np.zeros((K, V), dtype=np.int64)
    n_k = np.zeros(K, dtype=np.int64)
    n_dk = np.zeros((len(docs), K), dtype=np.int64)
    assignments: list[np.ndarray] = []
    for d, doc in enumerate(docs):
        z = rng.integers(0, K, size=len(doc))
        assignments.append(z)
        for w, k in zip(doc, z):
            n_kw[k, w] += 1
            n_k[k] += 1
            n_dk[d, k] += 1

    beta_total = beta_word * V
    for _ in range(iters):
        for d, doc in enumerate(docs):
            z = assignments[d]
            for i, w in enumerate(doc):
                k_old = z[i]
                n_kw[k_old, w] -= 1
                n_k[k_old] -= 1
                n_dk[d, k_old] -= 1
                weights = (n_dk[d] + alpha_doc) * (n_kw[:, w] + beta_word) / (n_k + beta_total)
                cum = np.cumsum(weights)
                k_new = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), K - 1)
                z[i] = k_new
                n_kw[k_new, w] += 1
                n_k[k_new] += 1
                n_dk[d, k_new] += 1

    topic_word = (n_kw + beta_word) / (n_k + beta_total)[:, None]
    weight = (n_k + alpha_doc) / (n_k.sum() + alpha_doc * K)
    return TopicModel(
        num_topics=K,
        topic_word=topic_word,
        topic_weight=weight,
        alpha_doc=alpha_doc,
        beta_word=beta_word,
        seed=seed,
    )


def assign_subgoal(model: TopicModel, target: Utterance) -> SubGoal:
    """One-hot argmax of the target's document-topic posterior; ties to lowest index.

    The posterior is the single-sweep estimate p(k|doc) proportional to the
    corpus topic weight times the product of per-token topic-word
    probabilities, evaluated in log space. A target with no usable tokens is
    assigned index 0 and flagged degenerate.
    """
    if target.tokens is None:
        raise ValueError("target must be encoded")
    doc = _bag_of_words(target.tokens)
    if not doc:
        log.warning("degenerate sub-goal assignment: empty document")
        return SubGoal(index=0, dim=model.num_topics, degenerate=True)
    logp = np.log(model.topic_weight)
    for w in doc:
        logp = logp + np.log(model.topic_word[:, w])
    return SubGoal(index=int(np.argmax(logp)), dim=model.num_topics)


def posterior_over_topics(model: TopicModel, target: Utterance) -> np.ndarray:
    """Normalized document-topic posterior (uniform for empty documents)."""
    doc = _bag_of_words(target.tokens) if target.tokens is not None else []
    if not doc:
        return np.full(model.num_topics, 1.0 / model.num_topics)
    logp = np.log(model.topic_weight)
    for w in doc:
        logp = logp + np.log(model.topic_word[:, w])
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum()


def label_corpus(model: TopicModel, dialogues: list[Dialogue]) -> list[LabeledPair]:
    """One labeled (state, sub-goal, response) tuple per chatbot turn."""
    pairs = []
    for d in dialogues:
        for t in range(1, d.num_turns + 1):
            target = d.chatbot_utterance(t)
            pairs.append(
                LabeledPair(
                    state=state_at(d, t),
                    subgoal=assign_subgoal(model, target),
                    target=target,
                    dialogue_id=d.id,
                    turn=t,
                )
            )
    return pairs


def collect_pairs(dialogues: list[Dialogue]) -> list[tuple[DialogueState, Utterance]]:
    """All (state, chatbot response) pairs of a corpus, in dialogue order."""
    out = []
    for d in dialogues:
        for t in range(1, d.num_turns + 1):
            out.append((state_at(d, t), d.chatbot_utterance(t)))
    return out


def save_labels(pairs: list[LabeledPair], path) -> None:
    import json
    from pathlib import Path

    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps({"dialogue_id": p.dialogue_id, "turn": p.turn, "subgoal": p.subgoal.index})
                + "\n"
            )
