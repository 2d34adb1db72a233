import logging

import pytest
import torch

torch.set_num_threads(1)
logging.getLogger("gochat").setLevel(logging.WARNING)


@pytest.fixture(scope="session")
def synthetic_bundle():
    """One fully pretrained agent stack on the bundled synthetic task.

    Session-scoped: the expensive pretraining runs once and is shared by the
    simulator, trainer, and acceptance tests. Tests must not mutate it; the
    reinforcement stage deep-copies what it trains.
    """
    from gochat.pipeline import (
        label_stage,
        prepare_corpus,
        pretrain_stage,
        synthetic_run_config,
    )
    from gochat.simulator import SyntheticTask, generate_synthetic_corpus

    cfg = synthetic_run_config(seed=11)
    task = SyntheticTask()
    raw = generate_synthetic_corpus(task, 300, seed=5)
    vocab, encoded = prepare_corpus(raw, cfg)
    topic_model, pairs = label_stage(encoded, vocab, cfg)
    bundle = pretrain_stage(encoded, vocab, topic_model, pairs, cfg)
    return {"cfg": cfg, "task": task, "raw": raw, "bundle": bundle}


@pytest.fixture(scope="session")
def synthetic_env_fixture(synthetic_bundle):
    from gochat.pipeline import synthetic_env

    return synthetic_env(
        synthetic_bundle["bundle"], synthetic_bundle["task"], synthetic_bundle["cfg"]
    )


def clone_models(bundle_dict):
    """Fresh model copies sharing nothing with the session bundle."""
    import copy

    bundle = bundle_dict["bundle"]
    manager = copy.deepcopy(bundle.manager)
    worker = copy.deepcopy(bundle.worker)
    critic = copy.deepcopy(bundle.critic)
    return manager, worker, critic
