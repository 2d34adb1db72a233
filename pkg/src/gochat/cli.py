"""Command-line pipeline: ingest, synth, label, pretrain, train-rl, evaluate, chat.

Artifacts live under one root directory (--out, else $GOCHAT_DATA_DIR, else
./gochat_data). Every command validates its configuration and inputs before
touching any output path. Exit codes: 0 success, 2 validation error,
3 missing artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from os import environ
from pathlib import Path

import torch

from .checkpoint import CheckpointError
from .config import ConfigError, EncoderConfig, RunConfig, WorkerConfig, load_config
from .corpus import (
    HUMAN,
    CorpusError,
    DialogueState,
    Utterance,
    Vocab,
    encode_corpus,
    encode_utterance,
    ingest_dialogues,
    serialize_dialogues,
)
from .generator import ResponseGenerator
from .metrics import evaluate
from .pipeline import prepare_corpus
from .policies import (
    OutcomeClassifier,
    SubgoalPolicy,
    ValueNetwork,
    greedy_subgoal,
    load_judge,
    save_critic,
    save_judge,
    save_manager,
)
from .rewards import NeighborIndex, StateKeyEmbedder, build_reference_index
from .rng import child_seed
from .simulator import LearnedJudge, SelfPlayEnv, SyntheticJudge, SyntheticTask, UserModel, generate_synthetic_corpus
from .subgoals import TopicModel, label_corpus, save_labels
from .torchutil import save_module
from .trainer import pretrain_manager, pretrain_user, pretrain_worker, train_a2c, train_judge

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MISSING = 3

log = logging.getLogger("gochat")


class MissingArtifact(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------


def _root(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(environ.get("GOCHAT_DATA_DIR", "gochat_data"))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path} (run the earlier pipeline stage first)")
    return path


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def _load_vocab(root: Path) -> Vocab:
    return Vocab.load(_require(root / "vocab.json", "vocabulary"))


def _load_corpus(root: Path, cfg: RunConfig, name: str = "corpus.jsonl"):
    return ingest_dialogues(
        _require(root / name, "corpus"), strict=cfg.corpus.strict, max_turns=cfg.corpus.max_turns
    )


def _model_meta(cfg: RunConfig, vocab: Vocab, extra: dict | None = None) -> dict:
    meta = {
        "vocab_size": len(vocab),
        "vocab_fingerprint": vocab.fingerprint(),
        "n": cfg.corpus.n,
        "seed": cfg.seed,
        "version": 1,
    }
    if extra:
        meta.update(extra)
    return meta


def _check_vocab(meta: dict, vocab: Vocab, path: Path) -> None:
    if meta.get("vocab_fingerprint") != vocab.fingerprint():
        raise ConfigError(f"vocab mismatch between checkpoint {path} and the corpus vocabulary")


def _load_worker_ckpt(path: Path, vocab: Vocab, prefix: str = "worker.") -> tuple[ResponseGenerator, dict]:
    from .checkpoint import load_arrays
    from .torchutil import load_named_arrays

    arrays, meta = load_arrays(_require(path, "checkpoint"))
    wcfg = WorkerConfig(**meta["worker_config"])
    model = ResponseGenerator(meta["vocab_size"], wcfg, num_subgoals=meta["num_subgoals"], seed=0)
    load_named_arrays(model, arrays, prefix)
    _check_vocab(meta, vocab, path)
    return model, meta


def _load_manager_ckpt(path: Path, vocab: Vocab) -> tuple[SubgoalPolicy, dict]:
    from .checkpoint import load_arrays

    arrays, meta = load_arrays(_require(path, "checkpoint"))
    ecfg = EncoderConfig(**meta["encoder_config"])
    model = SubgoalPolicy(meta["vocab_size"], ecfg, num_subgoals=meta["num_subgoals"], seed=0)
    from .torchutil import load_named_arrays

    load_named_arrays(model, arrays, "manager.")
    _check_vocab(meta, vocab, path)
    return model, meta


def _labeled_pairs(root: Path, cfg: RunConfig, vocab: Vocab):
    topic_model = TopicModel.load(_require(root / "topics.bin", "topic model"))
    dialogues = _load_corpus(root, cfg)
    encoded = encode_corpus(vocab, dialogues, cfg.corpus.n)
    return topic_model, encoded, label_corpus(topic_model, encoded)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _load_cfg(args)
    root = _root(args)
    dialogues = ingest_dialogues(
        _require(Path(args.input), "input corpus"),
        strict=cfg.corpus.strict,
        max_turns=cfg.corpus.max_turns,
    )
    root.mkdir(parents=True, exist_ok=True)
    out = Path(args.output) if args.output else root / "corpus.jsonl"
    serialize_dialogues(dialogues, out)
    print(f"ingested {len(dialogues)} dialogues -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    root = _root(args)
    task = SyntheticTask.load(_require(Path(args.task), "task definition")) if args.task else SyntheticTask()
    dialogues = generate_synthetic_corpus(task, args.count, seed=child_seed(cfg.seed, "synth"))
    root.mkdir(parents=True, exist_ok=True)
    out = Path(args.output) if args.output else root / "corpus.jsonl"
    serialize_dialogues(dialogues, out)
    task.save(root / "task.json")
    successes = sum(d.outcome == "success" for d in dialogues)
    print(f"generated {len(dialogues)} dialogues ({successes} success) -> {out}")
    return EXIT_OK


def cmd_label(args) -> int:
    cfg = _load_cfg(args)
    if args.k is not None:
        cfg.subgoals.num_subgoals = args.k
        cfg.subgoals.validate()
    root = _root(args)
    dialogues = _load_corpus(root, cfg)
    from .pipeline import label_stage

    vocab, encoded = prepare_corpus(dialogues, cfg)
    topic_model, pairs = label_stage(encoded, vocab, cfg)
    vocab.save(root / "vocab.json")
    topic_model.save(root / "topics.bin")
    save_labels(pairs, root / "labels.jsonl")
    print(
        f"labeled {len(pairs)} pairs with {cfg.subgoals.num_subgoals} sub-goals "
        f"-> {root / 'labels.jsonl'}, {root / 'topics.bin'}, {root / 'vocab.json'}"
    )
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    root = _root(args)
    vocab = _load_vocab(root)
    topic_model, encoded, pairs = _labeled_pairs(root, cfg, vocab)
    k = topic_model.num_topics

    if args.which == "worker":
        worker = ResponseGenerator(len(vocab), cfg.worker, num_subgoals=k, seed=child_seed(cfg.seed, "worker-init"))
        pretrain_worker(pairs, worker, cfg.pretrain, seed=child_seed(cfg.seed, "worker-fit"))
        meta = _model_meta(cfg, vocab, {"worker_config": dataclasses.asdict(cfg.worker), "num_subgoals": k})
        save_module(root / "worker.ckpt", worker, "worker.", {"kind": "worker", **meta})
        embedder = StateKeyEmbedder(worker.embedding.weight.detach().numpy(), num_subgoals=k)
        index = build_reference_index(pairs, embedder, k=cfg.simulator.knn)
        index.save(root / "ref_index.bin", root / "ref_payload.jsonl")
        print(f"worker checkpoint -> {root / 'worker.ckpt'}; reference index ({len(index)} rows)")
    elif args.which == "manager":
        manager = SubgoalPolicy(len(vocab), cfg.encoder, num_subgoals=k, seed=child_seed(cfg.seed, "manager-init"))
        pretrain_manager(pairs, manager, cfg.pretrain, seed=child_seed(cfg.seed, "manager-fit"))
        meta = _model_meta(cfg, vocab, {"encoder_config": dataclasses.asdict(cfg.encoder), "num_subgoals": k})
        save_manager(root / "manager.ckpt", manager, meta)
        print(f"manager checkpoint -> {root / 'manager.ckpt'}")
    elif args.which == "user":
        user = pretrain_user(
            encoded, vocab, cfg.worker, cfg.pretrain, n=cfg.corpus.n, seed=child_seed(cfg.seed, "user-fit")
        )
        meta = _model_meta(cfg, vocab, {"worker_config": dataclasses.asdict(cfg.worker), "num_subgoals": 0})
        save_module(root / "user.ckpt", user.generator, "user.", {"kind": "user", **meta})
        print(f"user model checkpoint -> {root / 'user.ckpt'}")
    else:  # judge
        judge = OutcomeClassifier(len(vocab), cfg.encoder, seed=child_seed(cfg.seed, "judge-init"))
        acc = train_judge(encoded, judge, cfg.pretrain, seed=child_seed(cfg.seed, "judge-fit"))
        meta = _model_meta(cfg, vocab, {"encoder_config": dataclasses.asdict(cfg.encoder)})
        save_judge(root / "judge.ckpt", judge, meta)
        print(f"judge checkpoint -> {root / 'judge.ckpt'} (held-out accuracy {acc:.3f})")
    return EXIT_OK


def _build_env(root: Path, cfg: RunConfig, vocab: Vocab, judge_mode: str) -> SelfPlayEnv:
    user_gen, _ = _load_worker_ckpt(root / "user.ckpt", vocab, prefix="user.")
    user = UserModel(user_gen, vocab, max_len=cfg.corpus.n)
    index = NeighborIndex.load(
        _require(root / "ref_index.bin", "reference index"),
        _require(root / "ref_payload.jsonl", "reference payloads"),
    )
    worker_tmp, wmeta = _load_worker_ckpt(root / "worker.ckpt", vocab)
    embedder = StateKeyEmbedder(
        worker_tmp.embedding.weight.detach().numpy(), num_subgoals=wmeta["num_subgoals"]
    )
    if judge_mode == "synthetic":
        task = SyntheticTask.load(_require(root / "task.json", "synthetic task definition"))
        judge = SyntheticJudge(task)
        end_token = task.end_token
    else:
        from .checkpoint import load_arrays

        _, jmeta = load_arrays(_require(root / "judge.ckpt", "judge checkpoint"))
        classifier = OutcomeClassifier(jmeta["vocab_size"], EncoderConfig(**jmeta["encoder_config"]), seed=0)
        load_judge(root / "judge.ckpt", classifier)
        _check_vocab(jmeta, vocab, root / "judge.ckpt")
        judge = LearnedJudge(classifier)
        end_token = cfg.simulator.end_token
    return SelfPlayEnv(
        user=user,
        judge=judge,
        vocab=vocab,
        n=cfg.corpus.n,
        end_token=end_token,
        reward_index=index,
        reward_embedder=embedder,
        knn=cfg.simulator.knn,
    )


def cmd_train_rl(args) -> int:
    cfg = _load_cfg(args)
    root = _root(args)
    vocab = _load_vocab(root)
    dialogues = _load_corpus(root, cfg)
    encoded = encode_corpus(vocab, dialogues, cfg.corpus.n)

    worker, wmeta = _load_worker_ckpt(root / "worker.ckpt", vocab)
    manager, _ = _load_manager_ckpt(root / "manager.ckpt", vocab)
    critic = ValueNetwork(len(vocab), cfg.encoder, seed=child_seed(cfg.seed, "critic-init"))
    env = _build_env(root, cfg, vocab, args.judge)

    updates = args.updates if args.updates is not None else cfg.simulator.updates
    if updates is None:
        per_epoch = -(-len(encoded) // cfg.train.episodes_per_update)
        updates = cfg.train.epochs * per_epoch
    tlog = train_a2c(manager, worker, critic, env, encoded, cfg.train, updates=updates)

    meta = _model_meta(cfg, vocab, {"worker_config": wmeta["worker_config"], "num_subgoals": wmeta["num_subgoals"]})
    save_module(root / "worker_rl.ckpt", worker, "worker.", {"kind": "worker", **meta})
    mmeta = _model_meta(cfg, vocab, {"encoder_config": dataclasses.asdict(cfg.encoder), "num_subgoals": wmeta["num_subgoals"]})
    save_manager(root / "manager_rl.ckpt", manager, mmeta)
    save_critic(root / "critic.ckpt", critic, _model_meta(cfg, vocab, {"encoder_config": dataclasses.asdict(cfg.encoder)}))
    tlog.write_csv(root / "train_log.csv")
    final = tlog.rows[-1]
    print(
        f"trained {updates} updates ({final['episodes']} episodes); "
        f"final success rate {final['success_rate']:.3f} -> {root / 'train_log.csv'}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    root = _root(args)
    vocab = _load_vocab(root)
    test_path = Path(args.test) if args.test else root / "corpus.jsonl"
    dialogues = ingest_dialogues(
        _require(test_path, "test corpus"), strict=cfg.corpus.strict, max_turns=cfg.corpus.max_turns
    )
    encoded = encode_corpus(vocab, dialogues, cfg.corpus.n)

    manager_path = Path(args.manager) if args.manager else _prefer(root, "manager_rl.ckpt", "manager.ckpt")
    worker_path = Path(args.worker) if args.worker else _prefer(root, "worker_rl.ckpt", "worker.ckpt")
    manager, _ = _load_manager_ckpt(manager_path, vocab)
    worker, _ = _load_worker_ckpt(worker_path, vocab)

    report = evaluate(manager, worker, encoded, n=cfg.corpus.n)
    report.write(root / "eval.json", root / "eval.txt", scale100=args.scale100)
    print(report.to_table(scale100=args.scale100))
    print(f"report -> {root / 'eval.json'}, {root / 'eval.txt'}")
    return EXIT_OK


def _prefer(root: Path, first: str, fallback: str) -> Path:
    if (root / first).exists():
        return root / first
    return _require(root / fallback, f"checkpoint {fallback}")


QUIT_TOKEN = "/quit"


def cmd_chat(args) -> int:
    cfg = _load_cfg(args)
    root = _root(args)
    vocab = _load_vocab(root)
    manager_path = Path(args.manager) if args.manager else _prefer(root, "manager_rl.ckpt", "manager.ckpt")
    worker_path = Path(args.worker) if args.worker else _prefer(root, "worker_rl.ckpt", "worker.ckpt")
    manager, _ = _load_manager_ckpt(manager_path, vocab)
    worker, _ = _load_worker_ckpt(worker_path, vocab)

    print(f"chat session (type {QUIT_TOKEN} to exit)")
    history: list[Utterance] = []
    for line in sys.stdin:
        text = line.strip()
        if not text:
            continue
        if text == QUIT_TOKEN:
            break
        history.append(Utterance(HUMAN, text, tokens=encode_utterance(vocab, text, cfg.corpus.n)))
        state = DialogueState(history=tuple(history))
        with torch.no_grad():
            subgoal = greedy_subgoal(manager.probs(state))
            h_ctx = worker.context_over_turns([u.tokens for u in state.human_utterances()])
            mu, _ = worker.posterior_params(h_ctx)
            z_aug = worker.augment_latent(mu, subgoal)
            out = worker.decode(z_aug, h_ctx, mode="greedy", max_len=cfg.corpus.n)
        reply = " ".join(vocab.token_of(int(t)) for t in out.tokens())
        history.append(Utterance("chatbot", reply, tokens=out))
        print(f"[sub-goal {subgoal.index}] {reply}")
        sys.stdout.flush()
    print("bye")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="run configuration JSON")
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--out", default=None, help="artifact root (default $GOCHAT_DATA_DIR or ./gochat_data)")

    parser = argparse.ArgumentParser(prog="gochat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate and normalize a dialogue corpus")
    p.add_argument("input", help="JSONL dialogue file")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="generate the bundled synthetic corpus")
    p.add_argument("--task", default=None, help="task definition JSON (default: bundled task)")
    p.add_argument("--count", type=int, default=300)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", parents=[common], help="discover sub-goals and label the corpus")
    p.add_argument("--k", type=int, default=None, help="number of sub-goals (overrides config)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("pretrain", parents=[common], help="supervised warm-start for one model")
    p.add_argument("--which", choices=("worker", "manager", "user", "judge"), required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-rl", parents=[common], help="joint actor-critic self-play training")
    p.add_argument("--judge", choices=("synthetic", "learned"), default="synthetic")
    p.add_argument("--updates", type=int, default=None)
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("evaluate", parents=[common], help="generation quality report")
    p.add_argument("--test", default=None, help="test corpus JSONL (default: training corpus)")
    p.add_argument("--manager", default=None)
    p.add_argument("--worker", default=None)
    p.add_argument("--scale100", action="store_true", help="display scores on the x100 scale")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("chat", parents=[common], help="interactive REPL with the trained agent")
    p.add_argument("--manager", default=None)
    p.add_argument("--worker", default=None)
    p.set_defaults(func=cmd_chat)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
