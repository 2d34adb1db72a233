"""High-level stage orchestration shared by the CLI, scripts, and tests.

Each function is one pipeline stage operating on in-memory artifacts; the
CLI adds file handling around these.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .config import RunConfig
from .corpus import Dialogue, Vocab, build_vocab, encode_corpus
from .generator import ResponseGenerator
from .policies import SubgoalPolicy, ValueNetwork
from .rewards import NeighborIndex, StateKeyEmbedder, build_reference_index
from .rng import child_seed
from .simulator import SelfPlayEnv, SyntheticJudge, SyntheticTask, UserModel
from .subgoals import LabeledPair, TopicModel, collect_pairs, fit_lda, label_corpus
from .trainer import pretrain_manager, pretrain_user, pretrain_worker

log = logging.getLogger(__name__)


def prepare_corpus(dialogues: list[Dialogue], cfg: RunConfig) -> tuple[Vocab, list[Dialogue]]:
    vocab = build_vocab(dialogues, min_count=cfg.corpus.min_count, max_size=cfg.corpus.max_vocab)
    return vocab, encode_corpus(vocab, dialogues, cfg.corpus.n)


def label_stage(
    encoded: list[Dialogue], vocab: Vocab, cfg: RunConfig
) -> tuple[TopicModel, list[LabeledPair]]:
    pairs = collect_pairs(encoded)
    model = fit_lda(
        pairs,
        vocab_size=len(vocab),
        num_topics=cfg.subgoals.num_subgoals,
        iters=cfg.subgoals.iters,
        seed=child_seed(cfg.seed, "lda"),
        alpha_doc=cfg.subgoals.alpha_doc,
        beta_word=cfg.subgoals.beta_word,
    )
    return model, label_corpus(model, encoded)


@dataclass
class AgentBundle:
    """Everything a training or evaluation stage needs in memory."""

    vocab: Vocab
    dialogues: list[Dialogue]
    topic_model: TopicModel
    labeled_pairs: list[LabeledPair]
    worker: ResponseGenerator
    manager: SubgoalPolicy
    critic: ValueNetwork
    user: UserModel
    embedder: StateKeyEmbedder
    index: NeighborIndex
    worker_losses: list[float] = field(default_factory=list)
    manager_losses: list[float] = field(default_factory=list)


def pretrain_stage(
    encoded: list[Dialogue],
    vocab: Vocab,
    topic_model: TopicModel,
    pairs: list[LabeledPair],
    cfg: RunConfig,
) -> AgentBundle:
    """Warm-start every model and build the retrieval reward index."""
    k = cfg.subgoals.num_subgoals
    worker = ResponseGenerator(len(vocab), cfg.worker, num_subgoals=k, seed=child_seed(cfg.seed, "worker-init"))
    log.info("pretraining worker on %d pairs", len(pairs))
    worker_losses = pretrain_worker(pairs, worker, cfg.pretrain, seed=child_seed(cfg.seed, "worker-fit"))

    manager = SubgoalPolicy(len(vocab), cfg.encoder, num_subgoals=k, seed=child_seed(cfg.seed, "manager-init"))
    log.info("pretraining manager")
    manager_losses = pretrain_manager(pairs, manager, cfg.pretrain, seed=child_seed(cfg.seed, "manager-fit"))

    log.info("training user model")
    user = pretrain_user(
        encoded,
        vocab,
        cfg.worker,
        cfg.pretrain,
        n=cfg.corpus.n,
        seed=child_seed(cfg.seed, "user-fit"),
    )

    critic = ValueNetwork(len(vocab), cfg.encoder, seed=child_seed(cfg.seed, "critic-init"))

    embedder = StateKeyEmbedder(
        worker.embedding.weight.detach().numpy(), num_subgoals=k, subgoal_scale=1.0
    )
    index = build_reference_index(pairs, embedder, k=cfg.simulator.knn)
    return AgentBundle(
        vocab=vocab,
        dialogues=encoded,
        topic_model=topic_model,
        labeled_pairs=pairs,
        worker=worker,
        manager=manager,
        critic=critic,
        user=user,
        embedder=embedder,
        index=index,
        worker_losses=worker_losses,
        manager_losses=manager_losses,
    )


def synthetic_env(bundle: AgentBundle, task: SyntheticTask, cfg: RunConfig) -> SelfPlayEnv:
    return SelfPlayEnv(
        user=bundle.user,
        judge=SyntheticJudge(task),
        vocab=bundle.vocab,
        n=cfg.corpus.n,
        end_token=task.end_token,
        reward_index=bundle.index,
        reward_embedder=bundle.embedder,
        knn=cfg.simulator.knn,
    )


def synthetic_run_config(seed: int = 0) -> RunConfig:
    """Desk-scale configuration for the bundled synthetic task."""
    cfg = RunConfig(seed=seed)
    cfg.corpus.n = 8
    cfg.corpus.min_count = 1
    cfg.subgoals.num_subgoals = 6
    cfg.subgoals.iters = 60
    cfg.encoder.d_emb = 24
    cfg.encoder.d_word = 24
    cfg.encoder.d_dlg = 16
    cfg.worker.d_emb = 24
    cfg.worker.d_enc = 32
    cfg.worker.d_ctx = 32
    cfg.worker.d_z = 8
    cfg.worker.d_dec = 32
    cfg.pretrain.lr = 0.005
    cfg.pretrain.epochs = 60
    cfg.pretrain.batch_size = 32
    cfg.train.lr = 0.02
    cfg.train.m = 6
    cfg.train.episodes_per_update = 8
    cfg.train.worker_lr_scale = 0.05
    cfg.train.seed = seed
    cfg.simulator.updates = 250
    cfg.validate()
    return cfg


def chatbot_response_pool(encoded: list[Dialogue]):
    """All chatbot-side token sequences of a corpus (scripted baseline actions)."""
    pool = []
    for d in encoded:
        for t in range(1, d.num_turns + 1):
            tokens = d.chatbot_utterance(t).tokens
            if tokens is not None and tokens.real_length > 0:
                pool.append(tokens)
    return pool
