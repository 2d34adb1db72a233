#!/usr/bin/env python3
"""Oracle run: success rate of the scripted random policy on the synthetic task.

The policy draws a uniform sub-goal and a uniformly sampled corpus response
each turn, playing against the same learned user model and judge as the
trained agent. Its success rate is the reference point for the policy-
improvement acceptance criterion.
"""

import argparse
import logging

import torch

from gochat.pipeline import (
    chatbot_response_pool,
    label_stage,
    prepare_corpus,
    pretrain_stage,
    synthetic_env,
    synthetic_run_config,
)
from gochat.simulator import ScriptedRandomPolicy, SyntheticTask, generate_synthetic_corpus
from gochat.trainer import run_random_baseline


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--dialogues", type=int, default=300)
    parser.add_argument("--episodes", type=int, default=1000)
    args = parser.parse_args()

    logging.basicConfig(level=logging.WARNING)
    torch.set_num_threads(1)

    cfg = synthetic_run_config(seed=args.seed)
    task = SyntheticTask()
    raw = generate_synthetic_corpus(task, args.dialogues, seed=5)
    vocab, encoded = prepare_corpus(raw, cfg)
    topic_model, pairs = label_stage(encoded, vocab, cfg)
    bundle = pretrain_stage(encoded, vocab, topic_model, pairs, cfg)
    env = synthetic_env(bundle, task, cfg)

    policy = ScriptedRandomPolicy(cfg.subgoals.num_subgoals, chatbot_response_pool(encoded))
    rate = run_random_baseline(policy, env, encoded, m=cfg.train.m, episodes=args.episodes, seed=99)
    print(f"random-policy success rate over {args.episodes} episodes: {rate:.4f}")


if __name__ == "__main__":
    main()
