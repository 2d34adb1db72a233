"""Low-level response generator: recurrent encoder, context state, Gaussian
latent, and an autoregressive decoder conditioned on the latent plus the
one-hot sub-goal.

The same class serves as the self-play user model by setting num_subgoals=0,
which drops the sub-goal slot from the decoder conditioning; the conditioning
utterances are then the other speaker's side of the conversation.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import WorkerConfig
from .corpus import BOS_ID, EOS_ID, PAD_ID, TokenSeq
from .rng import torch_stream
from .subgoals import SubGoal
from .torchutil import DTYPE, length_mask, token_matrix

PROB_FLOOR = 1e-12


def sample_latent(mu: torch.Tensor, sigma: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Reparameterized draw z = mu + sigma * eps (elementwise)."""
    if mu.shape != sigma.shape or mu.shape != eps.shape:
        raise ValueError("mu, sigma, eps must share a shape")
    return mu + sigma * eps


def gaussian_kl(mu_q, sigma_q, mu_p, sigma_p) -> torch.Tensor:
    """KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)) for diagonal Gaussians, summed over dims."""
    var_q, var_p = sigma_q**2, sigma_p**2
    per_dim = torch.log(sigma_p) - torch.log(sigma_q) + (var_q + (mu_q - mu_p) ** 2) / (2 * var_p) - 0.5
    return per_dim.sum(dim=-1)


class ResponseGenerator(nn.Module):
    def __init__(self, vocab_size: int, cfg: WorkerConfig, num_subgoals: int, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.num_subgoals = num_subgoals
        self.embedding = nn.Embedding(vocab_size, cfg.d_emb)
        self.turn_encoder = nn.GRU(cfg.d_emb, cfg.d_enc, batch_first=True)
        self.context_cell = nn.GRUCell(cfg.d_enc, cfg.d_ctx)
        self.posterior_mu = nn.Linear(cfg.d_ctx, cfg.d_z)
        self.posterior_logvar = nn.Linear(cfg.d_ctx, cfg.d_z)
        self.prior_mu = nn.Linear(cfg.d_ctx, cfg.d_z)
        self.prior_logvar = nn.Linear(cfg.d_ctx, cfg.d_z)
        self.decoder_init = nn.Linear(cfg.d_z + num_subgoals + cfg.d_ctx, cfg.d_dec)
        self.decoder_cell = nn.GRUCell(cfg.d_emb, cfg.d_dec)
        self.output_proj = nn.Linear(cfg.d_dec, vocab_size)
        self.to(DTYPE)
        self._init_parameters(seed)

    def _init_parameters(self, seed: int) -> None:
        # fan-in-scaled weights, zero biases, wide embeddings: token content
        # must be visible to the recurrences from the first epoch
        gen = torch_stream(seed, "init")
        with torch.no_grad():
            for name, param in sorted(self.named_parameters(), key=lambda kv: kv[0]):
                if name == "embedding.weight":
                    param.uniform_(-0.5, 0.5, generator=gen)
                elif param.dim() >= 2:
                    bound = 1.0 / math.sqrt(param.shape[-1])
                    param.uniform_(-bound, bound, generator=gen)
                else:
                    param.zero_()

    # ---- encoding and context ----

    def encode_turn(self, seq: TokenSeq) -> torch.Tensor:
        """Final GRU state over the non-pad tokens of one utterance."""
        return self.encode_turns([seq])[0]

    def encode_turns(self, seqs: list[TokenSeq]) -> torch.Tensor:
        ids, lengths = token_matrix(seqs)
        if int(ids.max()) >= self.vocab_size:
            raise ValueError("token id outside vocabulary range")
        outputs, _ = self.turn_encoder(self.embedding(ids))  # (B, L, d_enc)
        gather = (lengths - 1).view(-1, 1, 1).expand(-1, 1, outputs.shape[-1])
        return outputs.gather(1, gather).squeeze(1)  # (B, d_enc)

    def step_context(self, h_ctx: torch.Tensor, h_turn: torch.Tensor) -> torch.Tensor:
        """One context-recurrence step; the initial context is the zero vector."""
        return self.context_cell(h_turn.unsqueeze(0), h_ctx.unsqueeze(0))[0]

    def initial_context(self) -> torch.Tensor:
        return torch.zeros(self.cfg.d_ctx, dtype=DTYPE)

    def context_over_turns(self, seqs: list[TokenSeq]) -> torch.Tensor:
        """Fold the conditioning utterances (in order) into a context state."""
        h = self.initial_context()
        for seq in seqs:
            h = self.step_context(h, self.encode_turn(seq))
        return h

    def context_over_turns_batch(self, turn_lists: list[list[TokenSeq]]) -> torch.Tensor:
        """Batched context fold for variable-length turn lists -> (B, d_ctx)."""
        counts = [len(t) for t in turn_lists]
        if min(counts) < 1:
            raise ValueError("every item needs at least one conditioning utterance")
        flat = [seq for turns in turn_lists for seq in turns]
        encoded = self.encode_turns(flat)  # (sum_T, d_enc)
        t_max = max(counts)
        grouped = encoded.new_zeros(len(turn_lists), t_max, self.cfg.d_enc)
        offset = 0
        for i, count in enumerate(counts):
            grouped[i, :count] = encoded[offset : offset + count]
            offset += count
        mask = length_mask(torch.tensor(counts), t_max)
        h = encoded.new_zeros(len(turn_lists), self.cfg.d_ctx)
        for t in range(t_max):
            h_new = self.context_cell(grouped[:, t], h)
            h = torch.where(mask[:, t].unsqueeze(1), h_new, h)
        return h

    # ---- latent ----

    def posterior_params(self, h_ctx: torch.Tensor):
        """(mu, sigma) of the state-conditioned Gaussian; sigma = exp(logvar / 2) > 0."""
        return self.posterior_mu(h_ctx), torch.exp(0.5 * self.posterior_logvar(h_ctx))

    def prior_params(self, h_ctx: torch.Tensor):
        return self.prior_mu(h_ctx), torch.exp(0.5 * self.prior_logvar(h_ctx))

    def augment_latent(self, z: torch.Tensor, subgoal: SubGoal | None) -> torch.Tensor:
        """Concatenate the latent with the one-hot sub-goal (latent first)."""
        if self.num_subgoals == 0:
            if subgoal is not None:
                raise ValueError("this generator has no sub-goal slot")
            return z
        if subgoal is None or subgoal.dim != self.num_subgoals:
            raise ValueError("sub-goal dimension mismatch")
        onehot = torch.from_numpy(subgoal.onehot).to(z.dtype)
        if z.dim() == 2:
            onehot = onehot.unsqueeze(0).expand(z.shape[0], -1)
        return torch.cat([z, onehot], dim=-1)

    # ---- decoding ----

    def decoder_start(self, z_aug: torch.Tensor, h_ctx: torch.Tensor) -> torch.Tensor:
        return self.decoder_init(torch.cat([z_aug, h_ctx], dim=-1))

    def decode(
        self,
        z_aug: torch.Tensor,
        h_ctx: torch.Tensor,
        mode: str = "greedy",
        rng: torch.Generator | None = None,
        max_len: int = 30,
    ) -> TokenSeq:
        """Autoregressive decode from BOS; halts at EOS or max_len tokens."""
        if mode not in ("greedy", "sample"):
            raise ValueError(f"unknown decode mode {mode!r}")
        if mode == "sample" and rng is None:
            raise ValueError("sample mode needs an rng")
        with torch.no_grad():
            h = self.decoder_start(z_aug.unsqueeze(0), h_ctx.unsqueeze(0))
            token = torch.tensor([BOS_ID])
            out: list[int] = []
            for _ in range(max_len):
                h = self.decoder_cell(self.embedding(token), h)
                logits = self.output_proj(h)[0].clone()
                # PAD marks absent positions and BOS is input-only; neither is
                # a legal output token.
                logits[PAD_ID] = float("-inf")
                logits[BOS_ID] = float("-inf")
                if mode == "greedy":
                    nxt = int(torch.argmax(logits))
                else:
                    nxt = int(torch.multinomial(torch.softmax(logits, dim=-1), 1, generator=rng))
                if nxt == EOS_ID:
                    break
                out.append(nxt)
                token = torch.tensor([nxt])
        ids = torch.full((max_len,), PAD_ID, dtype=torch.long)
        ids[: len(out)] = torch.tensor(out, dtype=torch.long)
        return TokenSeq(ids=ids.numpy(), real_length=len(out))

    # ---- likelihood ----

    def teacher_forced_log_prob(self, h_start: torch.Tensor, targets: list[TokenSeq]) -> torch.Tensor:
        """Sum of per-token log-probabilities of each target -> (B,).

        Inputs are BOS-shifted target tokens; only the real (non-pad) target
        positions contribute. Probabilities are floored at 1e-12.
        """
        lengths = torch.tensor([t.real_length for t in targets])
        if int(lengths.min()) < 1:
            raise ValueError("targets must be non-empty")
        width = int(lengths.max())
        ids = torch.zeros(len(targets), width, dtype=torch.long)
        for i, t in enumerate(targets):
            ids[i, : t.real_length] = torch.from_numpy(t.tokens())
        inputs = torch.cat([torch.full((len(targets), 1), BOS_ID, dtype=torch.long), ids[:, :-1]], dim=1)
        outputs, _ = self.decoder_gru_pass(inputs, h_start)
        logits = self.output_proj(outputs)  # (B, width, V)
        logp = torch.log(torch.softmax(logits, dim=-1).clamp_min(PROB_FLOOR))
        picked = logp.gather(2, ids.unsqueeze(-1)).squeeze(-1)  # (B, width)
        mask = length_mask(lengths, width).to(picked.dtype)
        return (picked * mask).sum(dim=1)

    def decoder_gru_pass(self, input_ids: torch.Tensor, h_start: torch.Tensor):
        """Unrolled decoder cell over a whole input matrix -> (B, L, d_dec)."""
        emb = self.embedding(input_ids)  # (B, L, d_emb)
        h = h_start
        states = []
        for t in range(input_ids.shape[1]):
            h = self.decoder_cell(emb[:, t], h)
            states.append(h)
        return torch.stack(states, dim=1), h

    def sequence_log_prob(
        self,
        conditioning: list[TokenSeq],
        subgoal: SubGoal | None,
        target: TokenSeq,
        eps: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """log pi(target | conditioning, subgoal) under teacher forcing.

        eps=None uses the latent mean (evaluation); otherwise the
        reparameterized sample mu + sigma*eps (training/rollout credit).
        """
        h_ctx = self.context_over_turns(conditioning)
        mu, sigma = self.posterior_params(h_ctx)
        z = mu if eps is None else sample_latent(mu, sigma, eps)
        z_aug = self.augment_latent(z, subgoal)
        h_start = self.decoder_start(z_aug.unsqueeze(0), h_ctx.unsqueeze(0))
        return self.teacher_forced_log_prob(h_start, [target])[0]

    def sequence_log_prob_batch(
        self,
        items: list[tuple[list[TokenSeq], SubGoal | None, TokenSeq, torch.Tensor | None]],
    ) -> torch.Tensor:
        """Batched teacher-forced log-probabilities with per-item fixed eps.

        Each item is (conditioning, sub-goal, target, eps); eps=None means the
        latent mean. Used to re-score rollout responses during policy updates.
        """
        h_ctx = self.context_over_turns_batch([c for c, _, _, _ in items])
        mu, sigma = self.posterior_params(h_ctx)
        eps_rows = [
            torch.zeros(self.cfg.d_z, dtype=mu.dtype) if e is None else e for _, _, _, e in items
        ]
        z = sample_latent(mu, sigma, torch.stack(eps_rows))
        if self.num_subgoals > 0:
            onehots = torch.stack([torch.from_numpy(g.onehot).to(z.dtype) for _, g, _, _ in items])
            z_aug = torch.cat([z, onehots], dim=-1)
        else:
            z_aug = z
        h_start = self.decoder_start(z_aug, h_ctx)
        return self.teacher_forced_log_prob(h_start, [t for _, _, t, _ in items])

    # ---- pretraining objective ----

    def pretrain_loss(
        self,
        items: list[tuple[list[TokenSeq], SubGoal | None, TokenSeq]],
        kl_weight: float,
        rng: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Mean of reconstruction negative log-likelihood plus weighted KL.

        Each item is (conditioning utterances, sub-goal, target). With an rng
        the latent is sampled; without, the posterior mean is used.
        """
        if not 0 <= kl_weight <= 1:
            raise ValueError("kl_weight must be in [0, 1]")
        if not items:
            raise ValueError("empty batch")
        h_ctx = self.context_over_turns_batch([c for c, _, _ in items])  # (B, d_ctx)
        mu, sigma = self.posterior_params(h_ctx)
        if rng is None:
            eps = torch.zeros_like(mu)
        else:
            eps = torch.empty_like(mu).normal_(generator=rng)
        z = sample_latent(mu, sigma, eps)
        if self.num_subgoals > 0:
            onehots = torch.stack(
                [torch.from_numpy(g.onehot).to(z.dtype) for _, g, _ in items]
            )
            z_aug = torch.cat([z, onehots], dim=-1)
        else:
            z_aug = z
        h_start = self.decoder_start(z_aug, h_ctx)
        log_probs = self.teacher_forced_log_prob(h_start, [t for _, _, t in items])
        mu_p, sigma_p = self.prior_params(h_ctx)
        kl = gaussian_kl(mu, sigma, mu_p, sigma_p)
        return (-log_probs + kl_weight * kl).mean()
