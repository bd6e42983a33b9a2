"""Dialogue records, tokenization, vocabularies and the synthetic copy task."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

BACKGROUND_CAP = 256
CONTEXT_CAP = 120

_PUNCT = re.compile(r"""([.,!?'":;()$])""")
_NUMBER = re.compile(r"(?<!\w)\d(?:[\d,.]*\d)?")


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and split off punctuation.

    Digit groups such as ``110,000,082`` stay whole; a trailing sentence
    period is still split off.
    """
    tokens = []
    for chunk in text.lower().split():
        pos = 0
        for m in _NUMBER.finditer(chunk):
            tokens.extend(_split_punct(chunk[pos:m.start()]))
            tokens.append(m.group())
            pos = m.end()
        tokens.extend(_split_punct(chunk[pos:]))
    return tokens


def _split_punct(s: str) -> list[str]:
    return [p for p in _PUNCT.split(s) if p]


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class Turn:
    speaker: int
    text: str


@dataclass(frozen=True)
class RawDialogue:
    background: str
    turns: tuple[Turn, ...]
    response: str
    references: tuple[str, ...]

    def __post_init__(self):
        if not self.background.strip():
            raise CorpusError("background must be non-empty")
        if not self.references:
            raise CorpusError("references must be non-empty")

    def to_json(self) -> dict:
        return {
            "background": self.background,
            "turns": [{"speaker": t.speaker, "text": t.text} for t in self.turns],
            "response": self.response,
            "references": list(self.references),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RawDialogue":
        for key in ("background", "turns", "response", "references"):
            if key not in obj:
                raise CorpusError(f"missing field {key!r}")
        turns = tuple(Turn(int(t["speaker"]), str(t["text"])) for t in obj["turns"])
        return cls(obj["background"], turns, obj["response"], tuple(obj["references"]))


def save_jsonl(corpus: Iterable[RawDialogue], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in corpus:
            fh.write(json.dumps(item.to_json(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_jsonl(path) -> list[RawDialogue]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            try:
                out.append(RawDialogue.from_json(obj))
            except (CorpusError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return out


# --------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Token/id table with ids 0..3 reserved for PAD, UNK, BOS, EOS."""

    def __init__(self, tokens: Iterable[str]):
        self.itos = list(RESERVED)
        for tok in tokens:
            if tok in RESERVED:
                continue
            self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token: str):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != RESERVED:
            raise CorpusError(f"{path}: first four lines must be the reserved tokens")
        return cls(lines[4:])


def corpus_tokens(item: RawDialogue) -> list[str]:
    toks = tokenize(item.background)
    for t in item.turns:
        toks.extend(tokenize(t.text))
    toks.extend(tokenize(item.response))
    return toks


def build_vocab(corpus: Iterable[RawDialogue], cap: int) -> Vocabulary:
    """Keep the ``cap - 4`` most frequent tokens; ties go to first occurrence."""
    if cap < 5:
        raise CorpusError(f"vocabulary cap must be >= 5, got {cap}")
    counts: Counter = Counter()
    first: dict[str, int] = {}
    n = 0
    for item in corpus:
        n += 1
        for tok in corpus_tokens(item):
            counts[tok] += 1
            first.setdefault(tok, len(first))
    if n == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    return Vocabulary([t for t in ranked if t not in RESERVED][: cap - 4])


# --------------------------------------------------------------------------
# encoded examples


@dataclass
class Example:
    background_ids: list[int]
    context_ids: list[int]
    response_ids: list[int]
    ext_map: dict[int, int]
    ext_tokens: list[str]
    background_tokens: list[str]
    context_tokens: list[str]
    references: list[list[str]] = field(default_factory=list)
    vocab_size: int = 0

    @property
    def ext_size(self) -> int:
        return len(self.ext_tokens)

    def background_ext_ids(self) -> list[int]:
        """Background ids in the extended space (OOV positions via ext_map)."""
        return [self.ext_map.get(i, b) for i, b in enumerate(self.background_ids)]

    def token_for(self, idx: int, vocab: Optional[Vocabulary] = None) -> str:
        """Surface form of ``idx``; without a vocabulary in-vocab ids print as ``#id``."""
        if idx < self.vocab_size:
            return vocab.token(idx) if vocab is not None else f"#{idx}"
        return self.ext_tokens[idx - self.vocab_size]


def encode_example(
    raw: RawDialogue,
    vocab: Vocabulary,
    background_mode: str = "oracle",
    context_cap: int = CONTEXT_CAP,
) -> Example:
    if background_mode not in ("oracle", "truncate256"):
        raise CorpusError(f"unknown background mode {background_mode!r}")
    bg = tokenize(raw.background)
    if background_mode == "truncate256":
        bg = bg[:BACKGROUND_CAP]
    if not bg:
        raise CorpusError("empty background after tokenization")
    ctx: list[str] = []
    for turn in raw.turns:
        ctx.extend(tokenize(turn.text))
    ctx = ctx[-context_cap:] if context_cap > 0 else []

    V = len(vocab)
    ext_ids: dict[str, int] = {}
    ext_map: dict[int, int] = {}
    for i, tok in enumerate(bg):
        if tok in vocab:
            continue
        if tok not in ext_ids:
            ext_ids[tok] = V + len(ext_ids)
        ext_map[i] = ext_ids[tok]

    def target_id(tok):
        if tok in vocab:
            return vocab.id(tok)
        return ext_ids.get(tok, UNK)

    response = [BOS] + [target_id(t) for t in tokenize(raw.response)] + [EOS]
    return Example(
        background_ids=[vocab.id(t) for t in bg],
        context_ids=[vocab.id(t) for t in ctx],
        response_ids=response,
        ext_map=ext_map,
        ext_tokens=list(ext_ids),
        background_tokens=bg,
        context_tokens=ctx,
        references=[tokenize(r) for r in raw.references],
        vocab_size=V,
    )


def encode_corpus(corpus, vocab, background_mode="oracle", context_cap=CONTEXT_CAP) -> list[Example]:
    return [encode_example(r, vocab, background_mode, context_cap) for r in corpus]


# --------------------------------------------------------------------------
# synthetic copy task


FILLER_TURNS = (
    "hi there , how are you ?",
    "i am good , thanks for asking .",
    "have you read anything interesting lately ?",
    "yes , i was reading a long document today .",
    "that sounds nice .",
    "what was it about ?",
    "lots of facts , some of them odd .",
    "i like odd facts .",
)
RELATIONS = (
    "likes", "owns", "built", "visited", "painted", "sold", "found", "wrote",
    "loves", "hates", "plays", "directed",
)
OOV_PREFIX = "zq"


@dataclass(frozen=True)
class SyntheticSpec:
    num_examples: int = 2000
    facts_per_background: int = 4
    value_token_pool_size: int = 20000
    vocab_seen_size: int = 100
    seed: int = 7
    span_length: int = 2
    num_entities: int = 200
    oov_rate: float = 0.5
    filler_turns: int = 2


def closed_vocabulary(spec: SyntheticSpec) -> list[str]:
    """Every token the generator can emit outside the copy-only pool."""
    toks: list[str] = []
    for text in FILLER_TURNS + ("tell me about", "i think", "."):
        toks.extend(tokenize(text))
    toks.extend(RELATIONS)
    toks.extend(f"ent{k}" for k in range(spec.num_entities))
    toks.extend(f"val{k}" for k in range(spec.vocab_seen_size))
    return list(dict.fromkeys(toks))


def generate_synthetic(spec: SyntheticSpec) -> list[RawDialogue]:
    """Background of K facts; the last turn asks about one entity.

    Each value span comes either from a small frequent pool (``val*``) or,
    with probability ``oov_rate``, from a large pool (``zq*``) whose tokens
    are too rare to enter the vocabulary and must therefore be copied.
    Spans within one background never share tokens, so the asked span has a
    unique source position.
    """
    K = spec.facts_per_background
    if K < 1:
        raise CorpusError("facts_per_background must be >= 1")
    if K > spec.num_entities:
        raise CorpusError("need at least as many entities as facts per background")
    L = spec.span_length
    if K * L > min(spec.vocab_seen_size, spec.value_token_pool_size):
        raise CorpusError("value pools too small for unique spans")
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.num_examples):
        ents = rng.choice(spec.num_entities, size=K, replace=False)
        seen = iter(rng.choice(spec.vocab_seen_size, size=K * L, replace=False))
        rare = iter(rng.choice(spec.value_token_pool_size, size=K * L, replace=False))
        facts = []
        for k in range(K):
            rel = RELATIONS[int(rng.integers(len(RELATIONS)))]
            if rng.random() < spec.oov_rate:
                span = [f"{OOV_PREFIX}{next(rare)}" for _ in range(L)]
            else:
                span = [f"val{next(seen)}" for _ in range(L)]
            facts.append((f"ent{ents[k]}", rel, span))
        asked = int(rng.integers(K))
        ent, rel, span = facts[asked]
        background = " ".join(f"{e} {r} {' '.join(s)} ." for e, r, s in facts)
        start = int(rng.integers(0, len(FILLER_TURNS) - spec.filler_turns + 1))
        filler = FILLER_TURNS[start:start + spec.filler_turns]
        turns = [Turn(i % 2, t) for i, t in enumerate(filler)]
        turns.append(Turn(len(turns) % 2, f"tell me about {ent}"))
        response = f"i think {ent} {rel} {' '.join(span)}"
        alt = f"{ent} {rel} {' '.join(span)} ."
        out.append(RawDialogue(background, tuple(turns), response, (response, alt)))
    return out


def requires_copy(item: RawDialogue) -> bool:
    return any(t.startswith(OOV_PREFIX) for t in tokenize(item.response))
