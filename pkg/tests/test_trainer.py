import copy
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gochat.config import EncoderConfig, PretrainConfig, TrainConfig, WorkerConfig
from gochat.corpus import CHATBOT, HUMAN, Dialogue, Utterance, build_vocab, encode_corpus
from gochat.generator import ResponseGenerator
from gochat.policies import SubgoalPolicy
from gochat.subgoals import LabeledPair, SubGoal, collect_pairs, fit_lda, label_corpus
from gochat.trainer import (
    advantages,
    bellman_value_loss,
    compute_returns,
    greedy_reconstruction_rate,
    manager_accuracy,
    policy_surrogate,
    pretrain_manager,
    pretrain_worker,
    train_a2c,
    user_response_pairs,
)
from util import analytic_grads, state_of


class TestReturns:
    def test_discounted_example(self):
        got = compute_returns([0.0, 0.0, 1.0], 0.99)
        assert got == pytest.approx([0.9801, 0.99, 1.0], abs=1e-12)

    def test_undiscounted_suffix_sum(self):
        assert compute_returns([0.0, 0.0, -1.0], 1.0) == [-1.0, -1.0, -1.0]

    def test_single(self):
        assert compute_returns([1.0], 0.99) == [1.0]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_returns([], 0.99)

    @given(
        st.lists(st.floats(min_value=-1, max_value=1, allow_nan=False), min_size=1, max_size=12),
        st.floats(min_value=0.1, max_value=1.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_recurrence_property(self, rewards, gamma):
        rets = compute_returns(rewards, gamma)
        for t in range(len(rewards)):
            nxt = rets[t + 1] if t + 1 < len(rewards) else 0.0
            assert rets[t] == pytest.approx(rewards[t] + gamma * nxt, abs=1e-9)


class TestPolicySurrogate:
    def test_hand_arithmetic(self):
        # alpha=1, beta=0.001, one turn: A=2, logpi_g=-1, A_w=0.5, logpi_u=-2
        got = policy_surrogate(
            1.0,
            0.001,
            torch.tensor([2.0], dtype=torch.float64),
            torch.tensor([-1.0], dtype=torch.float64),
            torch.tensor([0.5], dtype=torch.float64),
            torch.tensor([-2.0], dtype=torch.float64),
        )
        assert float(got) == pytest.approx(2.001, abs=1e-9)

    def test_zero_advantages(self):
        z = torch.zeros(3, dtype=torch.float64)
        lp = torch.randn(3, dtype=torch.float64)
        assert float(policy_surrogate(1.0, 0.001, z, lp, z, lp)) == 0.0

    def test_beta_zero_ignores_worker_terms(self):
        adv = torch.tensor([1.0, -1.0], dtype=torch.float64)
        lp = torch.tensor([-0.5, -0.2], dtype=torch.float64)
        w1 = torch.tensor([-9.0, -9.0], dtype=torch.float64)
        w2 = torch.tensor([9.0, 9.0], dtype=torch.float64)
        a = policy_surrogate(1.0, 0.0, adv, lp, adv, w1)
        b = policy_surrogate(1.0, 0.0, adv, lp, adv, w2)
        assert float(a) == float(b)


class TestValueLoss:
    def test_hand_arithmetic_terminal(self):
        v = torch.tensor(0.5, dtype=torch.float64)
        got = bellman_value_loss(1.0, 0.0, v, 0.99)
        assert float(got) == pytest.approx(0.125, abs=1e-9)

    def test_bellman_fixed_point(self):
        v_next = 0.7
        v = torch.tensor(0.3 + 0.99 * v_next, dtype=torch.float64)
        assert float(bellman_value_loss(0.3, v_next, v, 0.99)) == pytest.approx(0.0, abs=1e-15)

    def test_no_gradient_through_target(self):
        v = torch.tensor(0.2, dtype=torch.float64, requires_grad=True)
        target_v = torch.tensor(0.9, dtype=torch.float64, requires_grad=True)
        loss = bellman_value_loss(0.0, target_v, v, 0.99)
        loss.backward()
        assert target_v.grad is None or float(target_v.grad) == 0.0
        assert v.grad is not None


TOY_ENC = EncoderConfig(d_emb=16, d_word=16, d_dlg=8)
TOY_WRK = WorkerConfig(d_emb=16, d_enc=16, d_ctx=16, d_z=4, d_dec=16)


def toy_corpus(n_dialogues=24, seed=0):
    """Two template families; the human side carries the family signal, so
    sub-goal labels are predictable from every state."""
    rng = np.random.default_rng(seed)
    left = ["alpha beta gamma delta", "beta alpha delta gamma"]
    right = ["omega sigma tau rho", "sigma omega rho tau"]
    human_left = ["ask alpha things now", "more alpha talk please"]
    human_right = ["ask omega things now", "more omega talk please"]
    dialogues = []
    for i in range(n_dialogues):
        fam, hum = (left, human_left) if i % 2 == 0 else (right, human_right)
        turns = (
            Utterance(HUMAN, hum[int(rng.integers(2))]),
            Utterance(CHATBOT, fam[int(rng.integers(2))]),
            Utterance(HUMAN, hum[int(rng.integers(2))]),
            Utterance(CHATBOT, fam[int(rng.integers(2))]),
        )
        dialogues.append(Dialogue(id=f"d{i}", outcome="success" if i % 2 else "failure", turns=turns))
    vocab = build_vocab(dialogues)
    return vocab, encode_corpus(vocab, dialogues, 6)


def separable_pairs(vocab, encoded):
    """Sub-goal 0 for the left template family, 1 for the right."""
    pairs = []
    for d in encoded:
        for t in range(1, d.num_turns + 1):
            target = d.chatbot_utterance(t)
            label = 0 if "alpha" in target.text else 1
            from gochat.corpus import state_at

            pairs.append(
                LabeledPair(state=state_at(d, t), subgoal=SubGoal(label, 2), target=target, dialogue_id=d.id, turn=t)
            )
    return pairs


class TestPretrainWorker:
    def test_loss_strictly_decreases_first_three_epochs(self):
        vocab, encoded = toy_corpus()
        model = fit_lda(collect_pairs(encoded), vocab_size=len(vocab), num_topics=2, iters=20, seed=1)
        pairs = label_corpus(model, encoded)
        worker = ResponseGenerator(len(vocab), TOY_WRK, num_subgoals=2, seed=11)
        losses = pretrain_worker(pairs, worker, PretrainConfig(lr=0.005, epochs=3, batch_size=8), seed=5)
        assert losses[0] > losses[1] > losses[2]

    def test_empty_corpus_rejected(self):
        worker = ResponseGenerator(10, TOY_WRK, num_subgoals=2, seed=1)
        with pytest.raises(ValueError):
            pretrain_worker([], worker, PretrainConfig(), seed=0)

    def test_checkpoint_written_per_epoch(self, tmp_path):
        vocab, encoded = toy_corpus(4)
        pairs = separable_pairs(vocab, encoded)
        worker = ResponseGenerator(len(vocab), TOY_WRK, num_subgoals=2, seed=2)
        pretrain_worker(pairs, worker, PretrainConfig(lr=0.01, epochs=2, batch_size=8), seed=1, out_dir=tmp_path)
        assert (tmp_path / "worker.ep01.ckpt").exists()
        assert (tmp_path / "worker.ep02.ckpt").exists()

    def test_defaults_match_reference_setting(self):
        from gochat.config import SubgoalConfig

        cfg = PretrainConfig()
        assert cfg.lr == 0.001 and cfg.epochs == 10
        tcfg = TrainConfig()
        assert tcfg.alpha == 1.0 and tcfg.beta == 0.001
        assert tcfg.gamma == 0.99 and tcfg.m == 20
        assert tcfg.lr == 0.001 and tcfg.epochs == 10
        assert SubgoalConfig().num_subgoals == 14


class TestPretrainManager:
    def test_uniform_predictor_cross_entropy(self):
        vocab, encoded = toy_corpus()
        pairs = separable_pairs(vocab, encoded)[:8]
        manager = SubgoalPolicy(len(vocab), TOY_ENC, num_subgoals=14, seed=3)
        with torch.no_grad():
            manager.head.weight.zero_()
            manager.head.bias.zero_()
            ce = -manager.log_prob_batch([p.state for p in pairs], [p.subgoal for p in pairs]).mean()
        assert float(ce) == pytest.approx(math.log(14), abs=1e-9)

    def test_separable_corpus_accuracy(self):
        vocab, encoded = toy_corpus(32)
        pairs = separable_pairs(vocab, encoded)
        manager = SubgoalPolicy(len(vocab), TOY_ENC, num_subgoals=2, seed=7)
        pretrain_manager(pairs, manager, PretrainConfig(lr=0.01, epochs=30, batch_size=16), seed=9)
        assert manager_accuracy(pairs, manager) >= 0.95


class TestUserModel:
    def user_reconstruction(self, user, encoded):
        matched, total = 0, 0
        items = user_response_pairs(encoded)
        with torch.no_grad():
            for conditioning, _, target in items:
                h_ctx = user.generator.context_over_turns(conditioning)
                mu, _ = user.generator.posterior_params(h_ctx)
                out = user.generator.decode(mu, h_ctx, mode="greedy", max_len=6)
                got = out.tokens()
                for j, tok in enumerate(target.tokens()):
                    matched += int(j < len(got) and got[j] == tok)
                    total += 1
        return matched / total

    def test_toy_corpus_memorization(self):
        from gochat.trainer import pretrain_user

        vocab, encoded = toy_corpus(10)
        user = pretrain_user(
            encoded, vocab, TOY_WRK, PretrainConfig(lr=0.01, epochs=200, batch_size=8), n=6, seed=21
        )
        assert self.user_reconstruction(user, encoded) >= 0.8

    def test_same_seed_identical_parameters(self):
        from gochat.trainer import pretrain_user

        vocab, encoded = toy_corpus(6)
        users = [
            pretrain_user(encoded, vocab, TOY_WRK, PretrainConfig(lr=0.01, epochs=2, batch_size=8), n=6, seed=33)
            for _ in range(2)
        ]
        for a, b in zip(users[0].generator.parameters(), users[1].generator.parameters()):
            assert torch.equal(a, b)


class TestUserPairs:
    def test_pair_extraction(self):
        vocab, encoded = toy_corpus(4)
        items = user_response_pairs(encoded)
        # each 2-turn dialogue contributes one (chatbot turns, next human) pair
        assert len(items) == 4
        conditioning, subgoal, target = items[0]
        assert subgoal is None
        assert len(conditioning) == 1

    def test_no_pairs_rejected(self):
        from gochat.trainer import pretrain_user

        vocab, encoded = toy_corpus(3)
        single_turn = [
            Dialogue(id=d.id, outcome=d.outcome, turns=d.turns[:2]) for d in encoded
        ]
        with pytest.raises(ValueError, match="human-response"):
            pretrain_user(single_turn, vocab, TOY_WRK, PretrainConfig(epochs=1), n=6, seed=0)


class TestAdvantages:
    def test_record_fields(self, synthetic_bundle, synthetic_env_fixture):
        from gochat.simulator import NeuralManagerPolicy, NeuralWorkerPolicy, rollout, sample_opening
        from gochat.rng import numpy_stream, torch_stream

        bundle = synthetic_bundle["bundle"]
        cfg = synthetic_bundle["cfg"]
        ep = rollout(
            NeuralManagerPolicy(bundle.manager),
            NeuralWorkerPolicy(bundle.worker, max_len=cfg.corpus.n),
            synthetic_env_fixture,
            sample_opening(bundle.dialogues, numpy_stream(3, "o")),
            cfg.train.m,
            torch_stream(3, "r"),
        )
        records = advantages(ep, bundle.critic, gamma=0.99, worker_baseline=0.25)
        rets = compute_returns([tr.env_reward for tr in ep.transitions], 0.99)
        with torch.no_grad():
            values = bundle.critic.values_batch([tr.state for tr in ep.transitions])
        for t, rec in enumerate(records):
            assert rec.ret == pytest.approx(rets[t], abs=1e-12)
            assert rec.manager_adv == pytest.approx(rets[t] - float(values[t]), abs=1e-12)
            assert rec.worker_adv == pytest.approx(ep.transitions[t].worker_rew - 0.25, abs=1e-12)

    def test_baseline_centering(self):
        # r_w equal to the baseline gives zero advantage; fresh baseline 0 passes r_w through
        assert 0.3 - 0.3 == 0.0
        rec_adv = 0.7 - 0.0
        assert rec_adv == 0.7


class TestStopGradient:
    def test_critic_perturbation_leaves_policy_grads(self, synthetic_bundle):
        bundle = synthetic_bundle["bundle"]
        manager = copy.deepcopy(bundle.manager)
        state = state_of(*bundle.dialogues[0].turns[:1])
        g = SubGoal(2, manager.num_subgoals)
        frozen_adv = torch.tensor([0.8], dtype=torch.float64)

        def grads():
            lp = manager.log_prob_batch([state], [g])
            loss = policy_surrogate(1.0, 0.001, frozen_adv, lp, torch.zeros(1, dtype=torch.float64), torch.zeros(1, dtype=torch.float64))
            return analytic_grads(loss, list(manager.parameters()))

        g1 = grads()
        critic = copy.deepcopy(bundle.critic)
        with torch.no_grad():
            for p in critic.trainable_parameters():
                p.add_(1.0)
        g2 = grads()
        for a, b in zip(g1, g2):
            assert torch.equal(a, b)


class TestTrainA2C:
    def test_lr_zero_leaves_parameters_bit_identical(self, synthetic_bundle, synthetic_env_fixture):
        bundle = synthetic_bundle["bundle"]
        cfg = synthetic_bundle["cfg"]
        manager = copy.deepcopy(bundle.manager)
        worker = copy.deepcopy(bundle.worker)
        critic = copy.deepcopy(bundle.critic)
        before = {
            "m": [p.detach().clone() for p in manager.parameters()],
            "w": [p.detach().clone() for p in worker.parameters()],
            "c": [p.detach().clone() for p in critic.trainable_parameters()],
        }
        tcfg = TrainConfig(**{**cfg.train.__dict__, "lr": 0.0, "target_sync_every": 1000})
        train_a2c(manager, worker, critic, synthetic_env_fixture, bundle.dialogues, tcfg, updates=3)
        for p, q in zip(before["m"], manager.parameters()):
            assert torch.equal(p, q)
        for p, q in zip(before["w"], worker.parameters()):
            assert torch.equal(p, q)
        for p, q in zip(before["c"], critic.trainable_parameters()):
            assert torch.equal(p, q)

    def test_seeded_rerun_identical_log(self, synthetic_bundle, synthetic_env_fixture):
        bundle = synthetic_bundle["bundle"]
        cfg = synthetic_bundle["cfg"]
        csvs = []
        for _ in range(2):
            manager = copy.deepcopy(bundle.manager)
            worker = copy.deepcopy(bundle.worker)
            critic = copy.deepcopy(bundle.critic)
            tlog = train_a2c(manager, worker, critic, synthetic_env_fixture, bundle.dialogues, cfg.train, updates=5)
            csvs.append(tlog.to_csv())
        assert csvs[0] == csvs[1]

    def test_csv_header(self, synthetic_bundle, synthetic_env_fixture):
        from gochat.trainer import CSV_HEADER, TrainLog

        assert CSV_HEADER == "update,episodes,mean_return,mean_worker_reward,success_rate,loss_pi,loss_v"
        log = TrainLog(
            rows=[{
                "update": 1, "episodes": 8, "mean_return": -1.0,
                "mean_worker_reward": 0.25, "success_rate": 0.0,
                "loss_pi": 0.1, "loss_v": 0.2,
            }],
            episode_successes=[False] * 8,
            episode_returns=[-1.0] * 8,
        )
        text = log.to_csv()
        assert text.splitlines()[0] == CSV_HEADER
        assert log.rolling_success(4) == 0.0


class TestMemorizationSmoke:
    def test_small_overfit(self):
        vocab, encoded = toy_corpus(8)
        pairs = separable_pairs(vocab, encoded)[:6]
        seen, uniq = set(), []
        for p in pairs:
            key = (tuple(tuple(u.tokens.tokens().tolist()) for u in p.state.human_utterances()), p.subgoal.index)
            if key not in seen:
                seen.add(key)
                uniq.append(p)
        worker = ResponseGenerator(len(vocab), TOY_WRK, num_subgoals=2, seed=13)
        pretrain_worker(uniq, worker, PretrainConfig(lr=0.01, epochs=120, batch_size=4), seed=3)
        assert greedy_reconstruction_rate(worker, uniq, max_len=6) >= 0.9
