"""Goal-driven dialogue agent trained with hierarchical reinforcement learning.

The pipeline: ingest multi-turn dialogues with binary outcomes, discover
discrete sub-goals by topic clustering, pretrain a two-level policy (a
categorical sub-goal manager over a hierarchical attention encoder and a
variational recurrent response generator), then optimize both levels jointly
with advantage actor-critic against a frozen learned user model, scoring the
low level with kNN-retrieved BLEU rewards.
"""

__version__ = "0.1.0"
