"""Hierarchical attention encoder for dialogue states.

Two attentive levels: a bidirectional GRU reads each utterance's embeddings
and additive attention pools the hidden states into an utterance vector; a
unidirectional GRU then reads the utterance vectors in order and a second
additive attention pools its states into one dialogue vector. The same
encoder class backs the sub-goal policy, the value network, and the outcome
classifier, each with its own parameters.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import EncoderConfig
from .corpus import DialogueState, TokenSeq, Utterance
from .torchutil import DTYPE, init_uniform, length_mask, token_matrix


class AdditiveAttention(nn.Module):
    """score_i = v . tanh(W h_i + b); weights are a masked softmax of scores."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, dim)
        self.context = nn.Parameter(torch.zeros(dim))

    def forward(self, states: torch.Tensor, mask: torch.Tensor | None = None):
        # states: (B, T, dim); mask: (B, T) or None
        scores = torch.tanh(self.proj(states)) @ self.context  # (B, T)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)  # (B, T)
        pooled = (weights.unsqueeze(-1) * states).sum(dim=1)  # (B, dim)
        return pooled, weights


class DialogueEncoder(nn.Module):
    def __init__(self, vocab_size: int, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, cfg.d_emb)
        self.word_gru = nn.GRU(cfg.d_emb, cfg.d_word, batch_first=True, bidirectional=True)
        self.word_attn = AdditiveAttention(2 * cfg.d_word)
        self.word_proj = nn.Linear(2 * cfg.d_word, cfg.d_word)
        self.dlg_gru = nn.GRU(cfg.d_word, cfg.d_dlg, batch_first=True)
        self.dlg_attn = AdditiveAttention(cfg.d_dlg)
        self.to(DTYPE)
        init_uniform(self, seed)

    # ---- single-item operations ----

    def embed(self, seq: TokenSeq) -> torch.Tensor:
        """Embedding rows for the real tokens; an empty sequence embeds as UNK."""
        ids, _ = token_matrix([seq])
        if int(ids.max()) >= self.vocab_size:
            raise ValueError("token id outside vocabulary range")
        return self.embedding(ids[0])  # (L, d_emb)

    def encode_utterance_vec(self, embedded: torch.Tensor):
        """(L, d_emb) -> (utterance vector (d_word,), attention weights (L,))."""
        if embedded.dim() != 2 or embedded.shape[0] < 1:
            raise ValueError("need at least one embedded token row")
        outputs, _ = self.word_gru(embedded.unsqueeze(0))  # (1, L, 2*d_word)
        pooled, weights = self.word_attn(outputs)
        return self.word_proj(pooled)[0], weights[0]

    def encode_dialogue(self, utt_vectors: list[torch.Tensor]):
        """Ordered utterance vectors -> (dialogue vector (d_dlg,), weights (T,))."""
        if not utt_vectors:
            raise ValueError("need at least one utterance vector")
        stacked = torch.stack(utt_vectors).unsqueeze(0)  # (1, T, d_word)
        outputs, _ = self.dlg_gru(stacked)  # (1, T, d_dlg)
        pooled, weights = self.dlg_attn(outputs)
        return pooled[0], weights[0]

    def encode_state(self, state: DialogueState) -> torch.Tensor:
        return self.encode_histories([state.history])[0]

    # ---- batched path ----

    def encode_utterances(self, seqs: list[TokenSeq]) -> torch.Tensor:
        """Word level over a batch of utterances -> (B, d_word)."""
        ids, lengths = token_matrix(seqs)
        if int(ids.max()) >= self.vocab_size:
            raise ValueError("token id outside vocabulary range")
        outputs, _ = self.word_gru(self.embedding(ids))  # (B, L, 2*d_word)
        mask = length_mask(lengths, ids.shape[1])
        pooled, _ = self.word_attn(outputs, mask)
        return self.word_proj(pooled)

    def encode_histories(self, histories: list[tuple[Utterance, ...]]) -> torch.Tensor:
        """Full hierarchical pass over utterance histories -> (B, d_dlg).

        Histories may have different lengths; word-level work is shared in
        one batch and the dialogue level masks the padded tail positions.
        """
        seqs = []
        for history in histories:
            for utt in history:
                if utt.tokens is None:
                    raise ValueError("utterances must be encoded before the forward pass")
                seqs.append(utt.tokens)
        utt_vecs = self.encode_utterances(seqs)  # (sum_T, d_word)

        counts = [len(h) for h in histories]
        t_max = max(counts)
        batch = utt_vecs.new_zeros(len(histories), t_max, self.cfg.d_word)
        offset = 0
        for i, count in enumerate(counts):
            batch[i, :count] = utt_vecs[offset : offset + count]
            offset += count
        outputs, _ = self.dlg_gru(batch)  # (B, t_max, d_dlg)
        mask = length_mask(torch.tensor(counts), t_max)
        pooled, _ = self.dlg_attn(outputs, mask)
        return pooled

    def encode_states_batch(self, states: list[DialogueState]) -> torch.Tensor:
        return self.encode_histories([s.history for s in states])
