"""Generation quality metrics: smoothed sentence BLEU and distinct-n.

BLEU here is the sentence-level variant with add-one smoothing applied to
every modified n-gram precision (numerator and denominator), n-gram order
capped at min(4, candidate length), and the usual brevity penalty against the
closest reference length. Scores live in [0, 1]; reports can display the
x100 convention.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence, references: list[Sequence], max_n: int = 4) -> float:
    """Add-one smoothed sentence BLEU of `candidate` against `references`."""
    if len(candidate) == 0:
        raise ValueError("empty candidate")
    if not references:
        raise ValueError("at least one reference required")
    c = len(candidate)
    # closest reference length; ties resolved toward the shorter reference
    r = min((len(ref) for ref in references), key=lambda rl: (abs(rl - c), rl))
    orders = min(max_n, c)
    log_prec_sum = 0.0
    for n in range(1, orders + 1):
        cand_counts = _ngrams(candidate, n)
        max_ref_counts: Counter = Counter()
        for ref in references:
            ref_counts = _ngrams(ref, n)
            for gram, cnt in ref_counts.items():
                if cnt > max_ref_counts[gram]:
                    max_ref_counts[gram] = cnt
        clipped = sum(min(cnt, max_ref_counts[gram]) for gram, cnt in cand_counts.items())
        total = sum(cand_counts.values())
        log_prec_sum += math.log((clipped + 1.0) / (total + 1.0))
    brevity = math.exp(min(0.0, 1.0 - r / c))
    return brevity * math.exp(log_prec_sum / orders)


def distinct_n(utterances: Iterable[Sequence], n: int) -> float:
    """Unique n-grams over total n-grams across all utterances."""
    seen: set = set()
    total = 0
    for utt in utterances:
        for i in range(len(utt) - n + 1):
            seen.add(tuple(utt[i : i + n]))
            total += 1
    if total == 0:
        raise ValueError(f"no {n}-grams in the utterance set")
    return len(seen) / total


@dataclass(frozen=True)
class EvalReport:
    bleu: float
    distinct1: float
    distinct2: float
    n_samples: int

    def to_json(self, scale100: bool = False) -> str:
        f = 100.0 if scale100 else 1.0
        return json.dumps(
            {
                "bleu": self.bleu * f,
                "distinct1": self.distinct1 * f,
                "distinct2": self.distinct2 * f,
                "n_samples": self.n_samples,
            }
        )

    def to_table(self, scale100: bool = False) -> str:
        f = 100.0 if scale100 else 1.0
        rows = [
            ("BLEU", self.bleu * f),
            ("D-1", self.distinct1 * f),
            ("D-2", self.distinct2 * f),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  -----"]
        for name, value in rows:
            lines.append(f"{name:<{width}}  {value:.4f}")
        lines.append(f"(n_samples = {self.n_samples})")
        return "\n".join(lines)

    def write(self, json_path: str | Path, table_path: str | Path, scale100: bool = False) -> None:
        Path(json_path).write_text(self.to_json(scale100) + "\n")
        Path(table_path).write_text(self.to_table(scale100) + "\n")


def evaluate(manager, worker, test_dialogues, n: int, max_n: int = 4) -> EvalReport:
    """Score greedy generations against the gold responses of a test corpus.

    For every chatbot turn the generator conditions on the true preceding
    context with the argmax sub-goal and the latent mean, then the report
    aggregates corpus-mean sentence BLEU and distinct-1/2.
    """
    import torch

    from .corpus import state_at
    from .policies import greedy_subgoal

    if not test_dialogues:
        raise ValueError("empty test set")
    generations, references = [], []
    with torch.no_grad():
        for d in test_dialogues:
            for t in range(1, d.num_turns + 1):
                state = state_at(d, t)
                subgoal = greedy_subgoal(manager.probs(state))
                h_ctx = worker.context_over_turns([u.tokens for u in state.human_utterances()])
                mu, _ = worker.posterior_params(h_ctx)
                z_aug = worker.augment_latent(mu, subgoal)
                out = worker.decode(z_aug, h_ctx, mode="greedy", max_len=n)
                target = d.chatbot_utterance(t).tokens
                if target is None:
                    raise ValueError("test dialogues must be encoded")
                generations.append(out.tokens().tolist())
                references.append(target.tokens().tolist())
    return evaluate_generations(generations, references, max_n=max_n)


def evaluate_generations(
    generations: list[Sequence], references: list[Sequence], max_n: int = 4
) -> EvalReport:
    """Corpus-mean sentence BLEU plus distinct-1/2 over the generation set."""
    if not generations or len(generations) != len(references):
        raise ValueError("need equally many generations and references, at least one")
    scores = [bleu(g, [r], max_n=max_n) if len(g) else 0.0 for g, r in zip(generations, references)]
    return EvalReport(
        bleu=sum(scores) / len(scores),
        distinct1=distinct_n(generations, 1),
        distinct2=distinct_n(generations, 2),
        n_samples=len(generations),
    )
