"""Supervised warm-start training and the joint actor-critic loop.

Pretraining fits the worker (and the user model) by maximum likelihood with
an annealed KL term, and fits the manager as a sub-goal classifier on the
offline cluster labels. The reinforcement stage then collects self-play
episodes and descends a single objective: the policy surrogate (advantage-
weighted log-probabilities of the chosen sub-goals and responses, advantages
held constant) plus the one-step Bellman error of the value network against
its frozen target copy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import PretrainConfig, TrainConfig, WorkerConfig
from .corpus import SUCCESS, Dialogue, DialogueState, Vocab
from .generator import ResponseGenerator
from .policies import OutcomeClassifier, SubgoalPolicy, ValueNetwork
from .rng import child_seed, numpy_stream, torch_stream
from .simulator import (
    Episode,
    NeuralManagerPolicy,
    NeuralWorkerPolicy,
    SelfPlayEnv,
    UserModel,
    rollout,
    sample_opening,
)
from .subgoals import LabeledPair, SubGoal

log = logging.getLogger(__name__)

CSV_HEADER = "update,episodes,mean_return,mean_worker_reward,success_rate,loss_pi,loss_v"


# ---------------------------------------------------------------------------
# return / advantage / loss arithmetic
# ---------------------------------------------------------------------------


def compute_returns(env_rewards: list[float], gamma: float) -> list[float]:
    """Discounted suffix sums: R_t = r_t + gamma * R_{t+1}, R after the end = 0."""
    if not env_rewards:
        raise ValueError("empty reward list")
    out = [0.0] * len(env_rewards)
    acc = 0.0
    for i in range(len(env_rewards) - 1, -1, -1):
        acc = env_rewards[i] + gamma * acc
        out[i] = acc
    return out


@dataclass(frozen=True)
class AdvantageRecord:
    ret: float
    manager_adv: float
    worker_adv: float
    baseline: float


def advantages(
    episode: Episode, critic: ValueNetwork, gamma: float, worker_baseline: float
) -> list[AdvantageRecord]:
    """Per-turn records: return minus state value, and centered worker reward."""
    returns = compute_returns([tr.env_reward for tr in episode.transitions], gamma)
    with torch.no_grad():
        values = critic.values_batch([tr.state for tr in episode.transitions])
    return [
        AdvantageRecord(
            ret=returns[t],
            manager_adv=returns[t] - float(values[t]),
            worker_adv=tr.worker_rew - worker_baseline,
            baseline=worker_baseline,
        )
        for t, tr in enumerate(episode.transitions)
    ]


def policy_surrogate(
    alpha: float,
    beta: float,
    manager_advs: torch.Tensor,
    manager_logps: torch.Tensor,
    worker_advs: torch.Tensor,
    worker_logps: torch.Tensor,
) -> torch.Tensor:
    """Mean over turns of -(alpha * A * log pi_g + beta * A_w * log pi_u).

    Advantages enter as constants; gradients flow only through the log-probs.
    """
    terms = alpha * manager_advs.detach() * manager_logps + beta * worker_advs.detach() * worker_logps
    return -terms.mean()


def bellman_value_loss(
    reward: torch.Tensor | float,
    target_next_value: torch.Tensor | float,
    value: torch.Tensor,
    gamma: float,
) -> torch.Tensor:
    """Half squared one-step Bellman error; the target side carries no gradient."""
    target = torch.as_tensor(reward, dtype=value.dtype) + gamma * torch.as_tensor(
        target_next_value, dtype=value.dtype
    )
    return 0.5 * (target.detach() - value) ** 2


# ---------------------------------------------------------------------------
# supervised pretraining
# ---------------------------------------------------------------------------


def _worker_items(pairs: list[LabeledPair]):
    items = []
    for p in pairs:
        conditioning = [u.tokens for u in p.state.human_utterances()]
        if any(c is None for c in conditioning) or p.target.tokens is None:
            raise ValueError("pairs must come from an encoded corpus")
        items.append((conditioning, p.subgoal, p.target.tokens))
    return items


def pretrain_worker(
    pairs: list[LabeledPair],
    worker: ResponseGenerator,
    cfg: PretrainConfig,
    seed: int,
    out_dir: str | Path | None = None,
    ckpt_meta: dict | None = None,
) -> list[float]:
    """Adam on the generator's reconstruction + annealed-KL objective.

    Returns the mean loss per epoch; optionally checkpoints after each epoch.
    """
    if not pairs:
        raise ValueError("empty training corpus")
    items = _worker_items(pairs)
    return _fit_generator(items, worker, cfg, seed, out_dir, "worker", ckpt_meta or {})


def _fit_generator(items, generator, cfg: PretrainConfig, seed, out_dir, name, ckpt_meta) -> list[float]:
    opt = torch.optim.Adam(generator.parameters(), lr=cfg.lr)
    shuffle_rng = numpy_stream(seed, f"{name}-shuffle")
    latent_rng = torch_stream(seed, f"{name}-latent")
    step = 0
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(items))
        total, count = 0.0, 0
        for start in range(0, len(items), cfg.batch_size):
            batch = [items[i] for i in order[start : start + cfg.batch_size]]
            kl_weight = min(1.0, step / cfg.kl_anneal_batches) if cfg.kl_anneal_batches > 0 else 1.0
            loss = generator.pretrain_loss(batch, kl_weight=kl_weight, rng=latent_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
            count += len(batch)
            step += 1
        epoch_losses.append(total / count)
        log.info("%s pretrain epoch %d/%d loss %.4f", name, epoch + 1, cfg.epochs, epoch_losses[-1])
        if out_dir is not None:
            from .torchutil import save_module

            save_module(Path(out_dir) / f"{name}.ep{epoch + 1:02d}.ckpt", generator, f"{name}.", ckpt_meta)
    return epoch_losses


def pretrain_manager(
    pairs: list[LabeledPair],
    manager: SubgoalPolicy,
    cfg: PretrainConfig,
    seed: int,
) -> list[float]:
    """Cross-entropy between the categorical head and the offline sub-goal labels."""
    if not pairs:
        raise ValueError("empty training corpus")
    opt = torch.optim.Adam(manager.parameters(), lr=cfg.lr)
    shuffle_rng = numpy_stream(seed, "manager-shuffle")
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(pairs))
        total, count = 0.0, 0
        for start in range(0, len(pairs), cfg.batch_size):
            batch = [pairs[i] for i in order[start : start + cfg.batch_size]]
            logps = manager.log_prob_batch([p.state for p in batch], [p.subgoal for p in batch])
            loss = -logps.mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
            count += len(batch)
        epoch_losses.append(total / count)
        log.info("manager pretrain epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, epoch_losses[-1])
    return epoch_losses


def manager_accuracy(pairs: list[LabeledPair], manager: SubgoalPolicy) -> float:
    with torch.no_grad():
        probs = manager.probs_batch([p.state for p in pairs])
    pred = torch.argmax(probs, dim=1)
    truth = torch.tensor([p.subgoal.index for p in pairs])
    return float((pred == truth).double().mean())


def user_response_pairs(dialogues: list[Dialogue]):
    """(agent-side conditioning, next human utterance) pairs for the user model."""
    items = []
    for d in dialogues:
        for t in range(1, d.num_turns):
            conditioning = [d.chatbot_utterance(i).tokens for i in range(1, t + 1)]
            target = d.human_utterance(t + 1).tokens
            if any(c is None for c in conditioning) or target is None:
                raise ValueError("dialogues must be encoded")
            if target.real_length == 0:
                continue
            items.append((conditioning, None, target))
    return items


def pretrain_user(
    dialogues: list[Dialogue],
    vocab: Vocab,
    worker_cfg: WorkerConfig,
    cfg: PretrainConfig,
    n: int,
    seed: int,
    out_dir: str | Path | None = None,
    ckpt_meta: dict | None = None,
) -> UserModel:
    """Fit the human-side model on its response pairs and freeze it."""
    items = user_response_pairs(dialogues)
    if not items:
        raise ValueError("corpus has no human-response pairs")
    generator = ResponseGenerator(len(vocab), worker_cfg, num_subgoals=0, seed=child_seed(seed, "user-init"))
    _fit_generator(items, generator, cfg, seed, out_dir, "user", ckpt_meta or {})
    return UserModel(generator, vocab, max_len=n)


def train_judge(
    dialogues: list[Dialogue],
    judge: OutcomeClassifier,
    cfg: PretrainConfig,
    seed: int,
) -> float:
    """Binary cross-entropy on dialogue outcomes with an 80/20 split.

    Keeps the parameters from the epoch with the best held-out accuracy and
    returns that accuracy.
    """
    if len(dialogues) < 5:
        raise ValueError("need at least 5 labeled dialogues to train the judge")
    rng = numpy_stream(seed, "judge-split")
    order = rng.permutation(len(dialogues))
    cut = max(1, int(0.8 * len(dialogues)))
    train_ids, held_ids = order[:cut], order[cut:]
    histories = [d.turns for d in dialogues]
    labels = torch.tensor([1.0 if d.outcome == SUCCESS else 0.0 for d in dialogues], dtype=torch.float64)

    opt = torch.optim.Adam(judge.parameters(), lr=cfg.lr)
    best_acc, best_state = -1.0, None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(train_ids)
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            logits = judge.success_logit([histories[i] for i in batch])
            loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, labels[batch])
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            held_logits = judge.success_logit([histories[i] for i in held_ids])
            acc = float(((held_logits > 0).double() == labels[held_ids]).double().mean())
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.detach().clone() for k, v in judge.state_dict().items()}
        log.info("judge epoch %d/%d held-out accuracy %.3f", epoch + 1, cfg.epochs, acc)
        if acc == 1.0:
            break
    if best_state is not None:
        judge.load_state_dict(best_state)
    return best_acc


def greedy_reconstruction_rate(
    worker: ResponseGenerator, pairs: list[LabeledPair], max_len: int
) -> float:
    """Fraction of target tokens reproduced position-by-position by greedy decoding."""
    matched, total = 0, 0
    with torch.no_grad():
        for p in pairs:
            conditioning = [u.tokens for u in p.state.human_utterances()]
            h_ctx = worker.context_over_turns(conditioning)
            mu, _ = worker.posterior_params(h_ctx)
            z_aug = worker.augment_latent(mu, p.subgoal)
            out = worker.decode(z_aug, h_ctx, mode="greedy", max_len=max_len)
            target = p.target.tokens.tokens()
            got = out.tokens()
            for j, tok in enumerate(target):
                matched += int(j < len(got) and got[j] == tok)
                total += 1
    return matched / max(total, 1)


# ---------------------------------------------------------------------------
# joint actor-critic training
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    rows: list[dict]
    episode_successes: list[bool]
    episode_returns: list[float]

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for row in self.rows:
            lines.append(
                "%d,%d,%r,%r,%r,%r,%r"
                % (
                    row["update"],
                    row["episodes"],
                    row["mean_return"],
                    row["mean_worker_reward"],
                    row["success_rate"],
                    row["loss_pi"],
                    row["loss_v"],
                )
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def rolling_success(self, window: int) -> float:
        tail = self.episode_successes[-window:]
        return sum(tail) / len(tail) if tail else 0.0


def train_a2c(
    manager: SubgoalPolicy,
    worker: ResponseGenerator,
    critic: ValueNetwork,
    env: SelfPlayEnv,
    opening_corpus: list[Dialogue],
    cfg: TrainConfig,
    updates: int,
) -> TrainLog:
    """On-policy loop: collect rollouts, then jointly descend the policy
    surrogate plus the value loss with one Adam step per update.

    The target value network is hard-synced every cfg.target_sync_every
    updates. The worker-reward baseline is an EMA (decay 0.99) refreshed
    after each update. All randomness flows from cfg.seed.
    """
    manager_policy = NeuralManagerPolicy(manager, mode="sample")
    worker_policy = NeuralWorkerPolicy(worker, max_len=env.n, mode="sample")
    params = (
        list(manager.parameters()) + list(worker.parameters()) + list(critic.trainable_parameters())
    )
    opt = torch.optim.Adam(
        [
            {"params": list(manager.parameters()) + list(critic.trainable_parameters()), "lr": cfg.lr},
            {"params": list(worker.parameters()), "lr": cfg.lr * cfg.worker_lr_scale},
        ]
    )
    roll_rng = torch_stream(cfg.seed, "rollout")
    open_rng = numpy_stream(cfg.seed, "openings")

    worker_baseline = 0.0
    rows: list[dict] = []
    successes: list[bool] = []
    ep_returns: list[float] = []
    episodes_done = 0

    for update in range(1, updates + 1):
        episodes: list[Episode] = []
        for _ in range(cfg.episodes_per_update):
            init = sample_opening(opening_corpus, open_rng)
            episodes.append(rollout(manager_policy, worker_policy, env, init, cfg.m, roll_rng))
        episodes_done += len(episodes)

        states: list[DialogueState] = []
        subgoals: list[SubGoal] = []
        worker_items = []
        returns: list[float] = []
        rewards: list[float] = []
        worker_rews: list[float] = []
        next_index: list[int | None] = []
        for ep in episodes:
            ep_ret = compute_returns([tr.env_reward for tr in ep.transitions], cfg.gamma)
            base = len(states)
            for t, tr in enumerate(ep.transitions):
                states.append(tr.state)
                subgoals.append(tr.subgoal)
                worker_items.append(
                    ([u.tokens for u in tr.state.human_utterances()], tr.subgoal, tr.response, tr.eps)
                )
                returns.append(ep_ret[t])
                rewards.append(tr.env_reward)
                worker_rews.append(tr.worker_rew)
                next_index.append(base + t + 1 if t + 1 < len(ep.transitions) else None)
            successes.append(ep.outcome == SUCCESS)
            ep_returns.append(sum(tr.env_reward for tr in ep.transitions))

        values = critic.values_batch(states)  # live, with grad
        with torch.no_grad():
            target_values = critic.values_batch(states, use_target=True)
        next_target = torch.tensor(
            [float(target_values[i]) if i is not None else 0.0 for i in next_index],
            dtype=values.dtype,
        )
        ret_t = torch.tensor(returns, dtype=values.dtype)
        manager_advs = ret_t - values.detach()
        worker_advs = torch.tensor(worker_rews, dtype=values.dtype) - worker_baseline

        manager_logps = manager.log_prob_batch(states, subgoals)
        worker_logps = worker.sequence_log_prob_batch(worker_items)
        loss_pi = policy_surrogate(
            cfg.alpha, cfg.beta, manager_advs, manager_logps, worker_advs, worker_logps
        )
        loss_v = bellman_value_loss(
            torch.tensor(rewards, dtype=values.dtype), next_target, values, cfg.gamma
        ).mean()
        loss = loss_pi + loss_v

        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()

        worker_baseline = 0.99 * worker_baseline + 0.01 * float(np.mean(worker_rews))
        if update % cfg.target_sync_every == 0:
            critic.sync_target()

        batch_successes = successes[-len(episodes) :]
        rows.append(
            {
                "update": update,
                "episodes": episodes_done,
                "mean_return": float(np.mean(ep_returns[-len(episodes) :])),
                "mean_worker_reward": float(np.mean(worker_rews)),
                "success_rate": sum(batch_successes) / len(batch_successes),
                "loss_pi": float(loss_pi.detach()),
                "loss_v": float(loss_v.detach()),
            }
        )
        if update % 25 == 0 or update == updates:
            log.info(
                "update %d/%d eps %d success %.2f loss_pi %.4f loss_v %.4f",
                update,
                updates,
                episodes_done,
                rows[-1]["success_rate"],
                rows[-1]["loss_pi"],
                rows[-1]["loss_v"],
            )
    return TrainLog(rows=rows, episode_successes=successes, episode_returns=ep_returns)


def run_random_baseline(
    policy,
    env: SelfPlayEnv,
    opening_corpus: list[Dialogue],
    m: int,
    episodes: int,
    seed: int,
) -> float:
    """Success rate of a scripted policy in the same environment (oracle run)."""
    roll_rng = torch_stream(seed, "baseline-rollout")
    open_rng = numpy_stream(seed, "baseline-openings")
    wins = 0
    for _ in range(episodes):
        init = sample_opening(opening_corpus, open_rng)
        ep = rollout(policy, policy, env, init, m, roll_rng)
        wins += int(ep.outcome == SUCCESS)
    return wins / episodes
