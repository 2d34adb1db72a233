"""Dialogue data model: tokenization, vocabulary, ingestion, state slicing.

A dialogue is an alternating sequence of human/chatbot utterances starting
with the human side, labeled with a binary outcome. Utterances are encoded as
fixed-length integer sequences padded with zeros. The decision state at turn t
is the history up to and including the t-th human utterance.
"""

from __future__ import annotations

import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

HUMAN = "human"
CHATBOT = "chatbot"

SUCCESS = "success"
FAILURE = "failure"


class CorpusError(ValueError):
    """Malformed dialogue data (schema, alternation, or range violations)."""


def tokenize(text: str) -> list[str]:
    """NFC-normalize, lowercase, and split on whitespace."""
    return unicodedata.normalize("NFC", text).lower().split()


@dataclass(frozen=True)
class TokenSeq:
    """Fixed-width token id sequence, zero-padded past `real_length`."""

    ids: np.ndarray
    real_length: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        object.__setattr__(self, "ids", ids)
        if not 0 <= self.real_length <= ids.shape[0]:
            raise CorpusError(f"real_length {self.real_length} out of range for width {ids.shape[0]}")
        if np.any(ids[self.real_length :] != PAD_ID):
            raise CorpusError("padding region contains non-PAD ids")
        if np.any(ids[: self.real_length] == PAD_ID):
            raise CorpusError("PAD id inside the real token region")

    @property
    def width(self) -> int:
        return int(self.ids.shape[0])

    def tokens(self) -> np.ndarray:
        """The real (non-padding) token ids."""
        return self.ids[: self.real_length]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TokenSeq)
            and self.real_length == other.real_length
            and np.array_equal(self.ids, other.ids)
        )


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    tokens: TokenSeq | None = None

    def __post_init__(self):
        if self.speaker not in (HUMAN, CHATBOT):
            raise CorpusError(f"unknown speaker {self.speaker!r}")


@dataclass(frozen=True)
class Dialogue:
    """Alternating utterances starting with the human side.

    `turns` holds 2T utterances for T complete turns; a trailing human
    utterance (as produced by terminated self-play episodes) is allowed.
    """

    id: str
    outcome: str
    turns: tuple[Utterance, ...]

    def __post_init__(self):
        if self.outcome not in (SUCCESS, FAILURE):
            raise CorpusError(f"dialogue {self.id}: outcome must be success/failure")
        if not self.turns:
            raise CorpusError(f"dialogue {self.id}: no turns")
        if self.turns[0].speaker != HUMAN:
            raise CorpusError(f"dialogue {self.id}: must start with human")
        for i in range(1, len(self.turns)):
            if self.turns[i].speaker == self.turns[i - 1].speaker:
                raise CorpusError(f"dialogue {self.id}: speakers do not alternate at position {i}")

    @property
    def num_turns(self) -> int:
        """Number of complete (human, chatbot) turn pairs."""
        return len(self.turns) // 2

    def human_utterance(self, t: int) -> Utterance:
        return self.turns[2 * (t - 1)]

    def chatbot_utterance(self, t: int) -> Utterance:
        return self.turns[2 * (t - 1) + 1]


@dataclass(frozen=True)
class DialogueState:
    """Ordered history ending with a human utterance (2t-1 utterances at turn t)."""

    history: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.history or self.history[-1].speaker != HUMAN:
            raise CorpusError("state must end with a human utterance")
        if len(self.history) % 2 != 1:
            raise CorpusError("state history length must be odd")

    @property
    def turn(self) -> int:
        return (len(self.history) + 1) // 2

    def human_utterances(self) -> tuple[Utterance, ...]:
        return self.history[0::2]


@dataclass(frozen=True)
class Vocab:
    token_to_id: dict[str, int] = field(repr=False)
    id_to_token: tuple[str, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.id_to_token[idx]

    def fingerprint(self) -> str:
        """Stable digest for checkpoint/corpus mismatch detection."""
        import hashlib

        h = hashlib.sha256()
        for tok in self.id_to_token:
            h.update(tok.encode())
            h.update(b"\x00")
        return h.hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"tokens": list(self.id_to_token)}, ensure_ascii=False))

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens = json.loads(Path(path).read_text())["tokens"]
        return cls(token_to_id={t: i for i, t in enumerate(tokens)}, id_to_token=tuple(tokens))


def build_vocab(dialogues: list[Dialogue], min_count: int = 1, max_size: int = 20000) -> Vocab:
    """Frequency-thresholded vocabulary; ties broken lexicographically.

    `max_size` counts non-reserved entries; reserved ids occupy slots 0-3.
    """
    if min_count < 1:
        raise CorpusError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for d in dialogues:
        for utt in d.turns:
            counts.update(tokenize(utt.text))
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count and tok not in RESERVED_TOKENS),
        key=lambda tok: (-counts[tok], tok),
    )[:max_size]
    id_to_token = RESERVED_TOKENS + tuple(kept)
    return Vocab(token_to_id={t: i for i, t in enumerate(id_to_token)}, id_to_token=id_to_token)


def encode_utterance(vocab: Vocab, text: str, n: int) -> TokenSeq:
    """Encode to exactly `n` ids: tokenize, map (UNK for unknown), truncate, pad."""
    if n < 2:
        raise CorpusError("n must be >= 2")
    ids = [vocab.id_of(tok) for tok in tokenize(text)][:n]
    padded = np.zeros(n, dtype=np.int64)
    padded[: len(ids)] = ids
    return TokenSeq(ids=padded, real_length=len(ids))


def decode_tokens(vocab: Vocab, seq: TokenSeq) -> list[str]:
    return [vocab.token_of(int(i)) for i in seq.tokens()]


def encode_dialogue(vocab: Vocab, dialogue: Dialogue, n: int) -> Dialogue:
    turns = tuple(
        replace(utt, tokens=encode_utterance(vocab, utt.text, n)) for utt in dialogue.turns
    )
    return replace(dialogue, turns=turns)


def encode_corpus(vocab: Vocab, dialogues: list[Dialogue], n: int) -> list[Dialogue]:
    return [encode_dialogue(vocab, d, n) for d in dialogues]


def state_at(dialogue: Dialogue, t: int) -> DialogueState:
    """History of the first 2t-1 utterances (through the t-th human utterance)."""
    if not 1 <= t <= dialogue.num_turns:
        raise CorpusError(f"turn {t} out of range 1..{dialogue.num_turns}")
    return DialogueState(history=dialogue.turns[: 2 * t - 1])


def state_after_turn(dialogue: Dialogue, t: int) -> tuple[Utterance, ...]:
    """History of the first 2t utterances (through the t-th chatbot utterance).

    Used for user-model training pairs, where the conditioning side ends with
    the chatbot's utterance.
    """
    if not 1 <= t <= dialogue.num_turns:
        raise CorpusError(f"turn {t} out of range 1..{dialogue.num_turns}")
    return dialogue.turns[: 2 * t]


_SCHEMA_FIELDS = {"id", "outcome", "turns"}
_TURN_FIELDS = {"speaker", "text"}


def _parse_dialogue(obj: dict, lineno: int, strict: bool) -> Dialogue:
    if not isinstance(obj, dict):
        raise CorpusError(f"line {lineno}: expected a JSON object")
    unknown = set(obj) - _SCHEMA_FIELDS
    if unknown:
        if strict:
            raise CorpusError(f"line {lineno}: unknown fields {sorted(unknown)}")
        log.warning("line %d: ignoring unknown fields %s", lineno, sorted(unknown))
    missing = _SCHEMA_FIELDS - set(obj)
    if missing:
        raise CorpusError(f"line {lineno}: missing fields {sorted(missing)}")
    if obj["outcome"] not in (0, 1):
        raise CorpusError(f"line {lineno}: outcome must be 0 or 1")
    turns = []
    for j, turn in enumerate(obj["turns"]):
        if not isinstance(turn, dict):
            raise CorpusError(f"line {lineno}: turn {j} is not an object")
        t_unknown = set(turn) - _TURN_FIELDS
        if t_unknown:
            if strict:
                raise CorpusError(f"line {lineno}: turn {j} unknown fields {sorted(t_unknown)}")
            log.warning("line %d: turn %d ignoring unknown fields %s", lineno, j, sorted(t_unknown))
        if _TURN_FIELDS - set(turn):
            raise CorpusError(f"line {lineno}: turn {j} missing speaker/text")
        if turn["speaker"] not in (HUMAN, CHATBOT):
            raise CorpusError(f"line {lineno}: turn {j} has speaker {turn['speaker']!r}")
        turns.append(Utterance(speaker=turn["speaker"], text=str(turn["text"])))
    try:
        return Dialogue(
            id=str(obj["id"]),
            outcome=SUCCESS if obj["outcome"] == 1 else FAILURE,
            turns=tuple(turns),
        )
    except CorpusError as exc:
        raise CorpusError(f"line {lineno}: {exc}") from None


def ingest_dialogues(path: str | Path, strict: bool = True, max_turns: int = 20) -> list[Dialogue]:
    """Read one JSON dialogue per line; reject malformed lines with line numbers."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dialogue file not found: {path}")
    dialogues = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            d = _parse_dialogue(obj, lineno, strict)
            if d.num_turns < 1:
                raise CorpusError(f"line {lineno}: dialogue has no complete turn")
            if d.num_turns > max_turns:
                raise CorpusError(f"line {lineno}: {d.num_turns} turns exceeds cap {max_turns}")
            dialogues.append(d)
    return dialogues


def dialogue_to_json(dialogue: Dialogue, extra: dict | None = None) -> str:
    obj = {
        "id": dialogue.id,
        "outcome": 1 if dialogue.outcome == SUCCESS else 0,
        "turns": [{"speaker": u.speaker, "text": u.text} for u in dialogue.turns],
    }
    if extra:
        obj.update(extra)
    return json.dumps(obj, ensure_ascii=False)


def serialize_dialogues(dialogues: list[Dialogue], path: str | Path) -> None:
    """Write the JSONL form; ingest(serialize(ingest(f))) is a fixed point."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(dialogue_to_json(d) + "\n")
