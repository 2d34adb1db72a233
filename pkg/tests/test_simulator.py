import copy

import pytest
import torch

from gochat.corpus import FAILURE, HUMAN, SUCCESS, Utterance, encode_utterance, ingest_dialogues
from gochat.pipeline import chatbot_response_pool, prepare_corpus, synthetic_run_config
from gochat.rng import numpy_stream, torch_stream
from gochat.simulator import (
    ScriptedRandomPolicy,
    ScriptedSyntheticUser,
    SelfPlayEnv,
    SyntheticJudge,
    SyntheticTask,
    Transition,
    export_episodes,
    generate_synthetic_corpus,
    judge_outcome,
    rollout,
    sample_opening,
)
from gochat.subgoals import SubGoal
from util import seq


@pytest.fixture(scope="module")
def task():
    return SyntheticTask()


@pytest.fixture(scope="module")
def small_world(task):
    cfg = synthetic_run_config(seed=2)
    raw = generate_synthetic_corpus(task, 60, seed=8)
    vocab, enc = prepare_corpus(raw, cfg)
    return cfg, raw, vocab, enc


def scripted_env(task, vocab, n, seed=0):
    return SelfPlayEnv(
        user=ScriptedSyntheticUser(task, vocab, n, seed=seed),
        judge=SyntheticJudge(task),
        vocab=vocab,
        n=n,
        end_token=task.end_token,
    )


class TestSyntheticCorpus:
    def test_exact_success_fraction(self, task):
        dialogues = generate_synthetic_corpus(task, 100, seed=1)
        assert sum(d.outcome == SUCCESS for d in dialogues) == 50

    def test_alternation_and_lengths(self, task):
        for d in generate_synthetic_corpus(task, 50, seed=2):
            assert d.turns[0].speaker == HUMAN
            assert 1 <= d.num_turns <= 20
            for i in range(1, len(d.turns)):
                assert d.turns[i].speaker != d.turns[i - 1].speaker

    def test_seed_determinism_byte_identical(self, task, tmp_path):
        from gochat.corpus import serialize_dialogues

        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        serialize_dialogues(generate_synthetic_corpus(task, 40, seed=3), a)
        serialize_dialogues(generate_synthetic_corpus(task, 40, seed=3), b)
        assert a.read_bytes() == b.read_bytes()

    def test_judge_agrees_with_generating_label(self, task):
        judge = SyntheticJudge(task)
        for d in generate_synthetic_corpus(task, 80, seed=4):
            assert judge.outcome(list(d.turns)) == d.outcome

    def test_templates_are_fixed_width(self, task):
        for group in task.human_templates.values():
            for tpl in group:
                assert len(tpl.split()) == 8
        for group in task.chatbot_templates.values():
            for tpl in group:
                assert len(tpl.split()) == 8

    def test_task_json_roundtrip(self, task, tmp_path):
        task.save(tmp_path / "task.json")
        loaded = SyntheticTask.load(tmp_path / "task.json")
        assert loaded == task


class TestTransitionInvariants:
    def test_env_reward_domain(self):
        state_utt = Utterance(HUMAN, "hi", tokens=seq([4]))
        from gochat.corpus import DialogueState

        st = DialogueState(history=(state_utt,))
        with pytest.raises(ValueError):
            Transition(state=st, subgoal=SubGoal(0, 2), response=seq([5]), env_reward=0.5, worker_rew=0.1)
        with pytest.raises(ValueError):
            Transition(state=st, subgoal=SubGoal(0, 2), response=seq([5]), env_reward=0.0, worker_rew=1.4)


class TestRollout:
    def test_shape_invariants_scripted(self, small_world, task):
        cfg, raw, vocab, enc = small_world
        env = scripted_env(task, vocab, cfg.corpus.n)
        pool = chatbot_response_pool(enc)
        policy = ScriptedRandomPolicy(6, pool)
        rng = torch_stream(1, "roll")
        openings = numpy_stream(1, "open")
        for _ in range(200):
            ep = rollout(policy, policy, env, sample_opening(enc, openings), m=20, rng=rng)
            assert ep.length <= 20
            rewards = [tr.env_reward for tr in ep.transitions]
            assert all(r == 0.0 for r in rewards[:-1])
            assert rewards[-1] in (-1.0, 1.0)
            assert all(0.0 <= tr.worker_rew <= 1.0 for tr in ep.transitions)
            transcript = ep.transcript(vocab)
            assert len(transcript) <= 40
            assert ep.outcome in (SUCCESS, FAILURE)

    def test_turn_cap_respected_with_never_ending_user(self, small_world, task):
        cfg, raw, vocab, enc = small_world

        class ChattyUser:
            def reply(self, history, rng):
                text = "the pay is daily and the tasks simple"
                return Utterance(HUMAN, text, tokens=encode_utterance(vocab, text, cfg.corpus.n))

        env = SelfPlayEnv(user=ChattyUser(), judge=SyntheticJudge(task), vocab=vocab, n=cfg.corpus.n, end_token=task.end_token)
        policy = ScriptedRandomPolicy(6, [encode_utterance(vocab, "ok fine that is good what comes next", cfg.corpus.n)])
        ep = rollout(policy, policy, env, enc[0].turns[0], m=7, rng=torch_stream(2, "roll"))
        assert ep.length == 7
        assert len(ep.transcript(vocab)) == 14  # capped episode: 2m utterances
        assert ep.outcome == FAILURE

    def test_secret_reveal_ends_with_success(self, small_world, task):
        cfg, raw, vocab, enc = small_world
        env = scripted_env(task, vocab, cfg.corpus.n)
        ask = task.chatbot_templates["ask"][0].format(trigger=task.trigger_token)
        policy = ScriptedRandomPolicy(6, [encode_utterance(vocab, ask, cfg.corpus.n)])
        ep = rollout(policy, policy, env, enc[0].turns[0], m=20, rng=torch_stream(3, "roll"))
        assert ep.outcome == SUCCESS
        assert ep.length == 1
        assert ep.transitions[-1].env_reward == 1.0

    def test_end_token_ends_with_failure(self, small_world, task):
        cfg, raw, vocab, enc = small_world
        env = scripted_env(task, vocab, cfg.corpus.n)
        small = task.chatbot_templates["smalltalk"][0]
        policy = ScriptedRandomPolicy(6, [encode_utterance(vocab, small, cfg.corpus.n)])
        ep = rollout(policy, policy, env, enc[0].turns[0], m=20, rng=torch_stream(4, "roll"))
        assert ep.outcome == FAILURE
        assert ep.length == task.patience
        assert ep.transitions[-1].env_reward == -1.0

    def test_deterministic_given_seed(self, small_world, task):
        cfg, raw, vocab, enc = small_world
        pool = chatbot_response_pool(enc)
        episodes = []
        for _ in range(2):
            env = scripted_env(task, vocab, cfg.corpus.n, seed=5)
            policy = ScriptedRandomPolicy(6, pool)
            rng = torch_stream(42, "roll")
            openings = numpy_stream(42, "open")
            eps = [rollout(policy, policy, env, sample_opening(enc, openings), 20, rng) for _ in range(10)]
            episodes.append(eps)
        for a, b in zip(*episodes):
            assert a.outcome == b.outcome
            assert [t.subgoal.index for t in a.transitions] == [t.subgoal.index for t in b.transitions]
            assert all(x.response == y.response for x, y in zip(a.transitions, b.transitions))


class TestNeuralRollout:
    def test_episode_with_learned_user(self, synthetic_bundle, synthetic_env_fixture):
        from gochat.simulator import NeuralManagerPolicy, NeuralWorkerPolicy

        bundle = synthetic_bundle["bundle"]
        cfg = synthetic_bundle["cfg"]
        mp = NeuralManagerPolicy(bundle.manager, mode="sample")
        wp = NeuralWorkerPolicy(bundle.worker, max_len=cfg.corpus.n, mode="sample")
        rng = torch_stream(5, "roll")
        openings = numpy_stream(5, "open")
        for _ in range(5):
            ep = rollout(mp, wp, synthetic_env_fixture, sample_opening(bundle.dialogues, openings), cfg.train.m, rng)
            assert ep.length <= cfg.train.m
            assert ep.transitions[-1].env_reward in (-1.0, 1.0)
            assert all(tr.eps is not None for tr in ep.transitions)

    def test_user_model_frozen(self, synthetic_bundle, synthetic_env_fixture):
        from gochat.trainer import train_a2c

        bundle = synthetic_bundle["bundle"]
        user = bundle.user
        assert all(not p.requires_grad for p in user.generator.parameters())
        before = [p.detach().clone() for p in user.generator.parameters()]
        train_a2c(
            copy.deepcopy(bundle.manager),
            copy.deepcopy(bundle.worker),
            copy.deepcopy(bundle.critic),
            synthetic_env_fixture,
            bundle.dialogues,
            synthetic_bundle["cfg"].train,
            updates=2,
        )
        for p, q in zip(before, user.generator.parameters()):
            assert torch.equal(p, q)


class TestEpisodeExport:
    def test_export_and_reingest(self, small_world, task, tmp_path):
        cfg, raw, vocab, enc = small_world
        env = scripted_env(task, vocab, cfg.corpus.n)
        pool = chatbot_response_pool(enc)
        policy = ScriptedRandomPolicy(6, pool)
        rng = torch_stream(6, "roll")
        openings = numpy_stream(6, "open")
        eps = [rollout(policy, policy, env, sample_opening(enc, openings), 20, rng) for _ in range(5)]
        out = tmp_path / "episodes.jsonl"
        export_episodes(eps, vocab, out)
        loaded = ingest_dialogues(out, strict=False)
        assert len(loaded) == 5
        import json

        first = json.loads(out.read_text().splitlines()[0])
        assert "subgoals" in first and isinstance(first["subgoals"], list)

    def test_judge_outcome_on_episode(self, small_world, task):
        cfg, raw, vocab, enc = small_world
        env = scripted_env(task, vocab, cfg.corpus.n)
        ask = task.chatbot_templates["ask"][0].format(trigger=task.trigger_token)
        policy = ScriptedRandomPolicy(6, [encode_utterance(vocab, ask, cfg.corpus.n)])
        ep = rollout(policy, policy, env, enc[0].turns[0], m=20, rng=torch_stream(7, "roll"))
        assert judge_outcome(ep, SyntheticJudge(task), vocab) == ep.outcome


class TestLearnedJudge:
    def test_threshold_rule(self, small_world):
        cfg, raw, vocab, enc = small_world
        from gochat.config import EncoderConfig
        from gochat.policies import OutcomeClassifier
        from gochat.simulator import LearnedJudge
        from gochat.trainer import train_judge
        from gochat.config import PretrainConfig

        judge_net = OutcomeClassifier(len(vocab), EncoderConfig(d_emb=16, d_word=16, d_dlg=8), seed=1)
        acc = train_judge(enc, judge_net, PretrainConfig(lr=0.01, epochs=15, batch_size=16), seed=3)
        judge = LearnedJudge(judge_net)
        assert acc >= 0.9
        right = 0
        for d in enc[:20]:
            right += judge.outcome(list(d.turns)) == d.outcome
        assert right >= 16
