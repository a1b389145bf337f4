"""TOWE corpus ingestion, BIO coding, splitting and synthetic data.

Record format (one (sentence, target) example per line, tab separated)::

    tokens<TAB>heads<TAB>target<TAB>opinions

``tokens`` and ``heads`` are space joined, heads are 0-based with -1 for the
root, spans are inclusive ``s:e`` and ``opinions`` is a comma-joined span
list (possibly empty).
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

from .syntax import ROOT, DepTree, Span, TreeError, span_anchor

LABELS = ("B", "I", "O")
LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}


class CorpusError(ValueError):
    """Malformed record; ``lineno`` is set when raised by a parser."""

    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        self.reason = msg
        super().__init__(msg if lineno is None else f"line {lineno}: {msg}")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    heads: tuple[int, ...]
    target_span: Span
    opinion_spans: tuple[Span, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "target_span", tuple(self.target_span))
        object.__setattr__(self, "opinion_spans", tuple(sorted(tuple(s) for s in self.opinion_spans)))
        self._validate()

    def _validate(self):
        n = len(self.tokens)
        if n < 1:
            raise CorpusError("empty sentence")
        if len(self.heads) != n:
            raise CorpusError(f"{len(self.heads)} heads for {n} tokens")
        try:
            DepTree(self.heads)
        except TreeError as exc:
            raise CorpusError(str(exc)) from None
        for s, e in (self.target_span, *self.opinion_spans):
            if not 0 <= s <= e < n:
                raise CorpusError(f"span {s}:{e} out of range for {n} tokens")
        spans = [self.target_span, *self.opinion_spans]
        covered = [False] * n
        for s, e in spans:
            for i in range(s, e + 1):
                if covered[i]:
                    raise CorpusError("span overlap")
                covered[i] = True

    @property
    def n(self) -> int:
        return len(self.tokens)

    @cached_property
    def tree(self) -> DepTree:
        return DepTree(self.heads)

    @cached_property
    def anchor(self) -> int:
        """Token standing in for the target word when a single index is needed."""
        return span_anchor(self.tree, self.target_span)

    def opinion_indices(self) -> list[int]:
        return [i for s, e in self.opinion_spans for i in range(s, e + 1)]

    def other_indices(self) -> list[int]:
        s, e = self.target_span
        taken = set(self.opinion_indices()) | set(range(s, e + 1))
        return [i for i in range(self.n) if i not in taken]

    def labels(self) -> list[str]:
        return encode_bio(self.opinion_spans, self.n)


def encode_bio(spans: Iterable[Span], n: int) -> list[str]:
    labels = ["O"] * n
    for s, e in sorted(spans):
        if not 0 <= s <= e < n:
            raise ValueError(f"span {s}:{e} out of range for length {n}")
        if any(lab != "O" for lab in labels[s:e + 1]):
            raise ValueError("overlapping spans")
        labels[s] = "B"
        for i in range(s + 1, e + 1):
            labels[i] = "I"
    return labels


def decode_bio(labels: Sequence[str]) -> set[Span]:
    """Spans of a BIO sequence; an ``I`` with nothing open starts a span."""
    spans = set()
    start = None
    for i, lab in enumerate(labels):
        if lab == "B" or (lab == "I" and start is None):
            if start is not None:
                spans.add((start, i - 1))
            start = i
        elif lab == "O":
            if start is not None:
                spans.add((start, i - 1))
            start = None
    if start is not None:
        spans.add((start, len(labels) - 1))
    return spans


def _parse_span(field: str) -> Span:
    parts = field.split(":")
    if len(parts) != 2:
        raise CorpusError(f"bad span {field!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise CorpusError(f"bad span {field!r}") from None


def _parse_annotation(target: str, opinions: str) -> tuple[Span, list[Span]]:
    spans = [_parse_span(f) for f in opinions.split(",")] if opinions.strip() else []
    return _parse_span(target.strip()), spans


def parse_record(line: str) -> Sentence:
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) != 4:
        raise CorpusError(f"expected 4 tab-separated fields, got {len(fields)}")
    tokens = fields[0].split()
    try:
        heads = [int(h) for h in fields[1].split()]
    except ValueError:
        raise CorpusError("non-integer head") from None
    target, opinions = _parse_annotation(fields[2], fields[3])
    return Sentence(tokens, heads, target, opinions)


def parse_corpus(text: str) -> list[Sentence]:
    """Parse a corpus document; blank lines are ignored."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(parse_record(line))
        except CorpusError as exc:
            raise CorpusError(exc.reason, lineno) from None
    return out


def format_span(span: Span) -> str:
    return f"{span[0]}:{span[1]}"


def format_record(sent: Sentence) -> str:
    return "\t".join([
        " ".join(sent.tokens),
        " ".join(str(h) for h in sent.heads),
        format_span(sent.target_span),
        ",".join(format_span(s) for s in sent.opinion_spans),
    ])


def format_corpus(sentences: Iterable[Sentence]) -> str:
    return "".join(format_record(s) + "\n" for s in sentences)


def read_corpus(path) -> list[Sentence]:
    with open(path, encoding="utf-8") as f:
        return parse_corpus(f.read())


def parse_conllu(conllu: str, annotations: str) -> list[Sentence]:
    """Read FORM/HEAD from CoNLL-U plus one ``target<TAB>opinions`` line per sentence.

    Multiword-token ranges and empty nodes are skipped.  Line numbers in
    errors refer to the annotation document.
    """
    sentences: list[tuple[list[str], list[int]]] = []
    forms: list[str] = []
    heads: list[int] = []
    for lineno, line in enumerate(conllu.splitlines(), 1):
        line = line.rstrip("\r")
        if not line.strip():
            if forms:
                sentences.append((forms, heads))
                forms, heads = [], []
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise CorpusError(f"expected 10 CoNLL-U columns, got {len(cols)}", lineno)
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            head = int(cols[6])
        except ValueError:
            raise CorpusError(f"bad HEAD {cols[6]!r}", lineno) from None
        forms.append(cols[1])
        heads.append(ROOT if head == 0 else head - 1)
    if forms:
        sentences.append((forms, heads))

    ann_lines = [(k, ln) for k, ln in enumerate(annotations.splitlines(), 1) if ln.strip()]
    if len(ann_lines) != len(sentences):
        raise CorpusError(
            f"{len(ann_lines)} annotation lines for {len(sentences)} sentences")
    out = []
    for (toks, hds), (lineno, line) in zip(sentences, ann_lines):
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != 2:
            raise CorpusError(f"expected 2 annotation fields, got {len(fields)}", lineno)
        try:
            target, opinions = _parse_annotation(*fields)
            out.append(Sentence(toks, hds, target, opinions))
        except CorpusError as exc:
            raise CorpusError(exc.reason, lineno) from None
    return out


def split_train_dev(data: Sequence, ratio: float, seed: int) -> tuple[list, list]:
    """Seeded partition; the dev part has round-half-up(ratio * len) items."""
    if not data:
        raise ValueError("cannot split an empty dataset")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    idx = list(range(len(data)))
    random.Random(seed).shuffle(idx)
    n_dev = int(math.floor(ratio * len(data) + 0.5))
    dev = set(idx[:n_dev])
    train = [x for i, x in enumerate(data) if i not in dev]
    return train, [data[i] for i in sorted(dev)]


def gen_synthetic(
    n_sentences: int,
    length_range: tuple[int, int] = (5, 12),
    seed: int = 0,
    p_opinion: float = 0.8,
    vocab_size: int = 40,
    n_markers: int = 10,
) -> list[Sentence]:
    """Random parsed sentences whose opinions are marker tokens next to the target.

    Each sentence has one target token.  With probability ``p_opinion`` a run
    of one or two ``OPN_k`` markers is attached directly to the target (tree
    distance 1) and placed within two positions of it, so every gold marker
    sits closer to the target, in the sentence, than any distractor.  Up to two distractor
    markers sit at tree distance >= 3 and linear distance >= 3; they are not
    gold.
    """
    lo, hi = length_range
    if lo < 3 or lo > hi:
        raise ValueError(f"infeasible length range {length_range}; need 3 <= lo <= hi")
    rng = random.Random(seed)
    return [_synthetic_sentence(rng, rng.randint(lo, hi), p_opinion, vocab_size, n_markers)
            for _ in range(n_sentences)]


def _synthetic_sentence(rng, n, p_opinion, vocab_size, n_markers) -> Sentence:
    t = rng.randrange(n)
    opinions: list[int] = []
    if rng.random() < p_opinion:
        k = 2 if rng.random() < 0.3 else 1
        # single markers may skip one filler; two-token runs touch the target
        gap = 1 if k == 2 else rng.choice((1, 2))
        options = []
        for side in (1, -1):
            run = [t + side * (gap + j) for j in range(k)]
            if all(0 <= p < n for p in run):
                options.append(sorted(run))
        if not options:
            options = [[t + side] for side in (1, -1) if 0 <= t + side < n]
        if options:
            opinions = rng.choice(options)
    taken = set(opinions) | {t}
    free = [i for i in range(n) if i not in taken]
    far = [i for i in free if abs(i - t) >= 3]
    distractors = rng.sample(far, min(len(far), rng.choice((0, 1, 1, 2))))
    fillers = [i for i in free if i not in distractors]

    # tree over target + fillers, grown outward so linear and tree distance correlate
    parent: dict[int, int] = {}
    placed = [t]
    for i in sorted(fillers, key=lambda i: (abs(i - t), i)):
        near = [p for p in placed if abs(p - i) <= 2] or placed
        parent[i] = rng.choice(near)
        placed.append(i)
    for o in opinions:
        parent[o] = t

    depth_from_t = {t: 0}
    for i in sorted(fillers, key=lambda i: (abs(i - t), i)):
        depth_from_t[i] = depth_from_t[parent[i]] + 1
    hosts = [f for f in fillers if depth_from_t[f] >= 2]
    for dpos in distractors:
        if hosts:
            parent[dpos] = min(hosts, key=lambda f: (abs(f - dpos), f))
        else:
            # no host deep enough: demote to a plain filler under its nearest node
            parent[dpos] = min(placed, key=lambda f: (abs(f - dpos), f))
            fillers.append(dpos)
    distractors = [d for d in distractors if d not in fillers]

    # orient the undirected tree from a random non-marker root
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for c, p in parent.items():
        adj[c].append(p)
        adj[p].append(c)
    root = rng.choice([t, *fillers])
    heads = [ROOT] * n
    seen = {root}
    stack = [root]
    while stack:
        u = stack.pop()
        for v in sorted(adj[u]):
            if v not in seen:
                seen.add(v)
                heads[v] = u
                stack.append(v)

    tokens = []
    markers = set(opinions) | set(distractors)
    for i in range(n):
        if i in markers:
            tokens.append(f"OPN_{rng.randrange(n_markers)}")
        else:
            tokens.append(f"w{rng.randrange(vocab_size)}")
    spans = [(opinions[0], opinions[-1])] if opinions else []
    return Sentence(tokens, heads, (t, t), spans)
