"""Self-play environment: user model, episode rollouts, outcome judges, and a
bundled synthetic secret-elicitation task with ground-truth success.

An episode alternates user and agent utterances starting from an opening
sampled from the training corpus. Each turn the manager samples a sub-goal,
the worker samples a response, and the response earns an immediate retrieval
reward; the environment pays the terminal +1/-1 once the user reveals the
secret (success), emits the end token (failure), or the turn cap is hit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import (
    CHATBOT,
    FAILURE,
    HUMAN,
    SUCCESS,
    Dialogue,
    DialogueState,
    TokenSeq,
    Utterance,
    Vocab,
    dialogue_to_json,
    encode_utterance,
)
from .generator import ResponseGenerator, sample_latent
from .policies import OutcomeClassifier, SubgoalPolicy, greedy_subgoal, sample_subgoal
from .rewards import NeighborIndex, StateKeyEmbedder, terminal_reward, worker_reward
from .rng import numpy_stream
from .subgoals import SubGoal

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

_HUMAN_TEMPLATES = {
    "open": [
        "hello friend we offer easy part time work",
        "hi there want to earn quick money today",
        "hello do you need a fast cash loan",
        "hi we provide instant loans with low interest",
    ],
    "continue": [
        "the pay is daily and the tasks simple",
        "you just follow easy steps on your phone",
    ],
    "reveal": [
        "sure my account number is {secret} please pay",
        "okay the account id is {secret} send money",
    ],
    "hangup": [
        "you ask too much i am leaving {end}",
        "this chat is wasting my time {end} friend",
    ],
}

_CHATBOT_TEMPLATES = {
    "engage": [
        "yes i am interested and want to join",
        "i am interested please let me join now",
    ],
    "probe": [
        "what tasks exactly give me the work details",
        "please give more details about the daily tasks",
    ],
    "smalltalk": [
        "that sounds fine and good tell me more",
        "ok fine that is good what comes next",
    ],
    "ask": [
        "please share your {trigger} id for the payment",
        "first give me your {trigger} id to pay",
    ],
    "close": [
        "thanks i noted it and will transfer soon",
        "great i noted that down transfer coming soon",
    ],
    "farewell": [
        "alright sorry to bother you have nice day",
        "sorry to bother you maybe another time then",
    ],
}

_NON_ASK = ("engage", "probe", "smalltalk")


@dataclass(frozen=True)
class SyntheticTask:
    """Scam-bait environment: the agent must get the user to state the secret.

    The scripted user reveals the secret in response to any agent utterance
    containing the trigger token, tolerates one other agent turn, and hangs
    up (emitting the end token) after a second one.
    """

    name: str = "secret-elicitation"
    secret_token: str = "krb7290"
    trigger_token: str = "account"
    end_token: str = "goodbye"
    success_fraction: float = 0.5
    patience: int = 2
    seed: int = 0
    human_templates: dict = field(default_factory=lambda: {k: list(v) for k, v in _HUMAN_TEMPLATES.items()})
    chatbot_templates: dict = field(default_factory=lambda: {k: list(v) for k, v in _CHATBOT_TEMPLATES.items()})

    def human_text(self, intent: str, rng: np.random.Generator) -> str:
        tpl = self.human_templates[intent][int(rng.integers(len(self.human_templates[intent])))]
        return tpl.format(secret=self.secret_token, end=self.end_token)

    def chatbot_text(self, intent: str, rng: np.random.Generator) -> str:
        tpl = self.chatbot_templates[intent][int(rng.integers(len(self.chatbot_templates[intent])))]
        return tpl.format(trigger=self.trigger_token)

    def secret_elicited(self, transcript: list[Utterance]) -> bool:
        """Ground-truth success rule: the secret appears in a human utterance."""
        return any(u.speaker == HUMAN and self.secret_token in u.text.split() for u in transcript)

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "secret_token": self.secret_token,
                "trigger_token": self.trigger_token,
                "end_token": self.end_token,
                "success_fraction": self.success_fraction,
                "patience": self.patience,
                "seed": self.seed,
                "human_templates": self.human_templates,
                "chatbot_templates": self.chatbot_templates,
            },
            indent=2,
            sort_keys=True,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticTask":
        data = json.loads(Path(path).read_text())
        return cls(**data)


def generate_synthetic_corpus(task: SyntheticTask, count: int, seed: int | None = None) -> list[Dialogue]:
    """Template-sampled dialogues; the success fraction is met exactly."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = numpy_stream(task.seed if seed is None else seed, "synthetic-corpus")
    num_success = round(count * task.success_fraction)
    flags = [i < num_success for i in range(count)]
    rng.shuffle(flags)

    dialogues = []
    for i, success in enumerate(flags):
        turns: list[Utterance] = [Utterance(HUMAN, task.human_text("open", rng))]
        if success:
            # one optional engagement exchange, then the ask and the reveal
            if rng.random() < 0.75:
                turns.append(Utterance(CHATBOT, task.chatbot_text(_NON_ASK[int(rng.integers(3))], rng)))
                turns.append(Utterance(HUMAN, task.human_text("continue", rng)))
            turns.append(Utterance(CHATBOT, task.chatbot_text("ask", rng)))
            turns.append(Utterance(HUMAN, task.human_text("reveal", rng)))
            turns.append(Utterance(CHATBOT, task.chatbot_text("close", rng)))
        else:
            # the user's patience runs out after `patience` non-ask turns
            for _ in range(task.patience - 1):
                turns.append(Utterance(CHATBOT, task.chatbot_text(_NON_ASK[int(rng.integers(3))], rng)))
                turns.append(Utterance(HUMAN, task.human_text("continue", rng)))
            turns.append(Utterance(CHATBOT, task.chatbot_text(_NON_ASK[int(rng.integers(3))], rng)))
            turns.append(Utterance(HUMAN, task.human_text("hangup", rng)))
            turns.append(Utterance(CHATBOT, task.chatbot_text("farewell", rng)))
        dialogues.append(
            Dialogue(id=f"synth-{i:05d}", outcome=SUCCESS if success else FAILURE, turns=tuple(turns))
        )
    return dialogues


# ---------------------------------------------------------------------------
# episode data
# ---------------------------------------------------------------------------


@dataclass
class Transition:
    state: DialogueState
    subgoal: SubGoal
    response: TokenSeq
    env_reward: float
    worker_rew: float
    eps: torch.Tensor | None = None
    user_reply: Utterance | None = None

    def __post_init__(self):
        if self.env_reward not in (-1.0, 0.0, 1.0):
            raise ValueError("env reward must be -1, 0, or +1")
        if not 0.0 <= self.worker_rew <= 1.0:
            raise ValueError("worker reward must lie in [0, 1]")


@dataclass
class Episode:
    init_utterance: Utterance
    transitions: list[Transition]
    outcome: str

    @property
    def length(self) -> int:
        return len(self.transitions)

    def transcript(self, vocab: Vocab) -> list[Utterance]:
        """Full utterance sequence: opening, then (response, reply) per turn."""
        out = [self.init_utterance]
        for tr in self.transitions:
            text = " ".join(vocab.token_of(int(t)) for t in tr.response.tokens())
            out.append(Utterance(CHATBOT, text, tokens=tr.response))
            if tr.user_reply is not None:
                out.append(tr.user_reply)
        return out

    def to_dialogue(self, vocab: Vocab, episode_id: str) -> tuple[Dialogue, list[int]]:
        transcript = self.transcript(vocab)
        return (
            Dialogue(id=episode_id, outcome=self.outcome, turns=tuple(transcript)),
            [tr.subgoal.index for tr in self.transitions],
        )


def export_episodes(episodes: list[Episode], vocab: Vocab, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, ep in enumerate(episodes):
            dialogue, subgoals = ep.to_dialogue(vocab, f"episode-{i:05d}")
            fh.write(dialogue_to_json(dialogue, extra={"subgoals": subgoals}) + "\n")


# ---------------------------------------------------------------------------
# policies (neural and scripted) and user sides
# ---------------------------------------------------------------------------


class NeuralManagerPolicy:
    def __init__(self, manager: SubgoalPolicy, mode: str = "sample"):
        self.manager = manager
        self.mode = mode

    def act(self, state: DialogueState, rng: torch.Generator) -> SubGoal:
        with torch.no_grad():
            probs = self.manager.probs(state)
        return sample_subgoal(probs, rng) if self.mode == "sample" else greedy_subgoal(probs)


class NeuralWorkerPolicy:
    """Samples a latent from the state-conditioned Gaussian and decodes tokens.

    In "sample" mode both the latent and the tokens are stochastic (training
    rollouts); "greedy" mode uses the latent mean and argmax decoding.
    """

    def __init__(self, worker: ResponseGenerator, max_len: int, mode: str = "sample"):
        self.worker = worker
        self.max_len = max_len
        self.mode = mode

    def respond(self, state: DialogueState, subgoal: SubGoal, rng: torch.Generator):
        with torch.no_grad():
            h_ctx = self.worker.context_over_turns([u.tokens for u in state.human_utterances()])
            mu, sigma = self.worker.posterior_params(h_ctx)
            if self.mode == "sample":
                eps = torch.empty_like(mu).normal_(generator=rng)
            else:
                eps = torch.zeros_like(mu)
            z = sample_latent(mu, sigma, eps)
            z_aug = self.worker.augment_latent(z, subgoal)
            seq = self.worker.decode(
                z_aug, h_ctx, mode=self.mode, rng=rng, max_len=self.max_len
            )
        return seq, eps


class ScriptedRandomPolicy:
    """Uniform random sub-goal plus a uniformly sampled corpus response.

    The no-learning oracle baseline: it plays in the identical environment
    but never looks at the state.
    """

    def __init__(self, num_subgoals: int, response_pool: list[TokenSeq]):
        if not response_pool:
            raise ValueError("empty response pool")
        self.num_subgoals = num_subgoals
        self.pool = response_pool

    def act(self, state: DialogueState, rng: torch.Generator) -> SubGoal:
        idx = int(torch.randint(self.num_subgoals, (1,), generator=rng))
        return SubGoal(index=idx, dim=self.num_subgoals)

    def respond(self, state: DialogueState, subgoal: SubGoal, rng: torch.Generator):
        pick = int(torch.randint(len(self.pool), (1,), generator=rng))
        return self.pool[pick], None


class UserModel:
    """Frozen generative model of the human side.

    Same architecture as the worker but without the sub-goal slot; it
    conditions on the agent-side utterances of the history and decodes the
    next human utterance greedily from the latent mean.
    """

    def __init__(self, generator: ResponseGenerator, vocab: Vocab, max_len: int):
        if generator.num_subgoals != 0:
            raise ValueError("user model must not have a sub-goal slot")
        self.generator = generator
        self.vocab = vocab
        self.max_len = max_len
        self.freeze()

    def freeze(self) -> None:
        for p in self.generator.parameters():
            p.requires_grad_(False)

    def reply(self, history: list[Utterance], rng: torch.Generator) -> Utterance:
        chatbot_turns = [u.tokens for u in history if u.speaker == CHATBOT]
        with torch.no_grad():
            h_ctx = self.generator.context_over_turns(chatbot_turns)
            mu, _ = self.generator.posterior_params(h_ctx)
            seq = self.generator.decode(mu, h_ctx, mode="greedy", max_len=self.max_len)
        text = " ".join(self.vocab.token_of(int(t)) for t in seq.tokens())
        return Utterance(HUMAN, text, tokens=seq)


class ScriptedSyntheticUser:
    """Ground-truth user dynamics of the synthetic task (no learning)."""

    def __init__(self, task: SyntheticTask, vocab: Vocab, n: int, seed: int = 0):
        self.task = task
        self.vocab = vocab
        self.n = n
        self.rng = numpy_stream(seed, "scripted-user")

    def reply(self, history: list[Utterance], rng: torch.Generator) -> Utterance:
        chatbot_texts = [u.text for u in history if u.speaker == CHATBOT]
        if self.task.trigger_token in chatbot_texts[-1].split():
            intent = "reveal"
        elif len(chatbot_texts) >= self.task.patience:
            intent = "hangup"
        else:
            intent = "continue"
        text = self.task.human_text(intent, self.rng)
        return Utterance(HUMAN, text, tokens=encode_utterance(self.vocab, text, self.n))


# ---------------------------------------------------------------------------
# judges
# ---------------------------------------------------------------------------


class SyntheticJudge:
    """Applies the task's ground-truth success rule."""

    def __init__(self, task: SyntheticTask):
        self.task = task

    def fires_success(self, transcript: list[Utterance]) -> bool:
        return self.task.secret_elicited(transcript)

    def outcome(self, transcript: list[Utterance]) -> str:
        return SUCCESS if self.task.secret_elicited(transcript) else FAILURE


class LearnedJudge:
    """Binary outcome classifier over the transcript, thresholded at 0.5.

    Mid-episode success firing is off by default: only the completed episode
    is classified.
    """

    def __init__(self, classifier: OutcomeClassifier, fire_early: bool = False):
        self.classifier = classifier
        self.fire_early = fire_early

    def fires_success(self, transcript: list[Utterance]) -> bool:
        if not self.fire_early:
            return False
        return self.classifier.success_prob(tuple(transcript)) >= 0.5

    def outcome(self, transcript: list[Utterance]) -> str:
        return SUCCESS if self.classifier.success_prob(tuple(transcript)) >= 0.5 else FAILURE


def judge_outcome(episode: Episode, judge, vocab: Vocab) -> str:
    """Outcome of a completed episode under the given judge."""
    return judge.outcome(episode.transcript(vocab))


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


@dataclass
class SelfPlayEnv:
    """Everything the rollout loop needs besides the two policies."""

    user: object  # .reply(history, rng) -> Utterance
    judge: object  # .fires_success(transcript), .outcome(transcript)
    vocab: Vocab
    n: int
    end_token: str
    reward_index: NeighborIndex | None = None
    reward_embedder: StateKeyEmbedder | None = None
    knn: int = 5

    def worker_rew(self, state: DialogueState, subgoal: SubGoal, response: TokenSeq) -> float:
        if self.reward_index is None or self.reward_embedder is None:
            return 0.0
        return worker_reward(self.reward_index, self.reward_embedder, state, subgoal, response, self.knn)

    @property
    def end_token_id(self) -> int:
        return self.vocab.id_of(self.end_token)


def rollout(
    manager_policy,
    worker_policy,
    env: SelfPlayEnv,
    init: Utterance,
    m: int,
    rng: torch.Generator,
) -> Episode:
    """One self-play episode of at most m turns starting from `init`.

    Per turn: read the user utterance, sample a sub-goal, sample a response,
    score the response. The loop ends when the user's next utterance carries
    the episode-end token, the judge fires success on the transcript, or the
    turn cap is reached; the terminal reward lands on the last transition.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if init.speaker != HUMAN or init.tokens is None:
        raise ValueError("init must be an encoded human utterance")
    history: list[Utterance] = [init]
    transitions: list[Transition] = []
    for t in range(1, m + 1):
        state = DialogueState(history=tuple(history))
        subgoal = manager_policy.act(state, rng)
        response, eps = worker_policy.respond(state, subgoal, rng)
        r_w = env.worker_rew(state, subgoal, response)
        text = " ".join(env.vocab.token_of(int(i)) for i in response.tokens())
        history.append(Utterance(CHATBOT, text, tokens=response))
        tr = Transition(
            state=state,
            subgoal=subgoal,
            response=response,
            env_reward=0.0,
            worker_rew=r_w,
            eps=eps,
        )
        transitions.append(tr)
        if t == m:
            break
        reply = env.user.reply(history, rng)
        history.append(reply)
        tr.user_reply = reply
        ended = env.end_token in reply.text.split()
        if ended or env.judge.fires_success(history):
            break
    outcome = env.judge.outcome(history)
    transitions[-1].env_reward = terminal_reward(outcome)
    return Episode(init_utterance=init, transitions=transitions, outcome=outcome)


def sample_opening(dialogues: list[Dialogue], rng: np.random.Generator) -> Utterance:
    """Uniform draw over the corpus's opening human utterances."""
    d = dialogues[int(rng.integers(len(dialogues)))]
    return d.turns[0]


def train_user_model(dialogues: list[Dialogue], vocab: Vocab, worker_cfg, pretrain_cfg, n: int, seed: int):
    """Supervised next-human-utterance training; the result is frozen."""
    from .trainer import pretrain_user  # local import to avoid a cycle

    return pretrain_user(dialogues, vocab, worker_cfg, pretrain_cfg, n=n, seed=seed)
