#!/usr/bin/env python3
"""End-to-end experiment on the bundled synthetic secret-elicitation task.

Generates the corpus, discovers sub-goals, pretrains every model, measures
the scripted random-policy baseline, runs joint actor-critic training, and
prints the before/after success rates plus the generation-quality report.
"""

import argparse
import logging
import time

import torch

from gochat.metrics import evaluate
from gochat.pipeline import (
    chatbot_response_pool,
    label_stage,
    prepare_corpus,
    pretrain_stage,
    synthetic_env,
    synthetic_run_config,
)
from gochat.simulator import ScriptedRandomPolicy, SyntheticTask, generate_synthetic_corpus
from gochat.trainer import greedy_reconstruction_rate, manager_accuracy, run_random_baseline, train_a2c


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--dialogues", type=int, default=300)
    parser.add_argument("--updates", type=int, default=250)
    parser.add_argument("--baseline-episodes", type=int, default=400)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)
    t0 = time.time()

    cfg = synthetic_run_config(seed=args.seed)
    task = SyntheticTask()
    raw = generate_synthetic_corpus(task, args.dialogues, seed=5)
    vocab, encoded = prepare_corpus(raw, cfg)
    print(f"corpus: {len(raw)} dialogues, vocab {len(vocab)}")

    topic_model, pairs = label_stage(encoded, vocab, cfg)
    print(f"labeled {len(pairs)} pairs with {cfg.subgoals.num_subgoals} sub-goals")

    bundle = pretrain_stage(encoded, vocab, topic_model, pairs, cfg)
    print(f"worker reconstruction: {greedy_reconstruction_rate(bundle.worker, pairs[:200], cfg.corpus.n):.3f}")
    print(f"manager label accuracy: {manager_accuracy(pairs, bundle.manager):.3f}")

    env = synthetic_env(bundle, task, cfg)
    baseline_policy = ScriptedRandomPolicy(cfg.subgoals.num_subgoals, chatbot_response_pool(encoded))
    baseline = run_random_baseline(
        baseline_policy, env, encoded, m=cfg.train.m, episodes=args.baseline_episodes, seed=99
    )
    print(f"scripted random baseline success rate: {baseline:.3f}")

    tlog = train_a2c(bundle.manager, bundle.worker, bundle.critic, env, encoded, cfg.train, updates=args.updates)
    rolling = tlog.rolling_success(200)
    print(f"trained rolling success (last 200 episodes): {rolling:.3f} (lift {rolling - baseline:+.3f})")

    report = evaluate(bundle.manager, bundle.worker, encoded[:100], n=cfg.corpus.n)
    print(report.to_table())
    print(f"total time {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
