"""Training loop, span-level evaluation, distance buckets and checkpoints."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .corpus import LABELS, Sentence, decode_bio
from .encoder import Vocab
from .model import DTYPE, OngModel, collate, make_examples
from .objective import AblationMask
from .syntax import tree_distances

log = logging.getLogger(__name__)

MAGIC = b"ONGCKPT1\n"
FORMAT_VERSION = 1
BUCKETS = ("1", "2", "3", ">3")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    data: str | None = None
    test: str | None = None
    dev_ratio: float = 0.2
    seed: int = 1
    epochs: int = 10
    batch: int = 32
    lr: float = 1e-3
    tok_dim: int = 100
    pos_dim: int = 30
    hidden: int = 300
    gcn_dim: int = 200
    gcn_layers: int = 2
    head_dim: int = 200
    gamma: float = 0.2
    alpha: float = 0.1
    beta: float = 0.1
    clip: float = 5.0
    max_rel: int = 100
    edge_layers: int = 1
    direct_adj: bool = False
    separate_reg_gcn: bool = False
    embeddings: str | None = None
    out: str | None = None
    mask: AblationMask = field(default_factory=AblationMask)

    def __post_init__(self):
        if isinstance(self.mask, dict):
            self.mask = AblationMask(**self.mask)
        for name in ("epochs", "batch", "tok_dim", "pos_dim", "hidden", "gcn_dim",
                     "gcn_layers", "head_dim", "max_rel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Metrics":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1, tp, fp, fn)

    def to_dict(self) -> dict:
        return asdict(self)


def span_metrics(predicted: Sequence[set], gold: Sequence[set]) -> Metrics:
    """Exact-boundary span matching, micro-averaged over examples."""
    if len(predicted) != len(gold):
        raise ValueError("prediction and gold counts differ")
    tp = fp = fn = 0
    for p, g in zip(predicted, gold):
        p, g = set(p), set(g)
        hit = len(p & g)
        tp += hit
        fp += len(p) - hit
        fn += len(g) - hit
    return Metrics.from_counts(tp, fp, fn)


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: list[str]
    state: dict[str, torch.Tensor]
    best_dev_f1: float = 0.0
    epoch: int = 0
    use_table: bool = True
    version: int = FORMAT_VERSION

    def vocabulary(self) -> Vocab:
        return Vocab(self.vocab[1:])

    def model(self) -> OngModel:
        m = build_model(self.config, len(self.vocab), self.use_table)
        m.load_state_dict(self.state)
        m.eval()
        return m

    def save(self, path) -> None:
        meta = {
            "version": self.version,
            "config": self.config.to_dict(),
            "vocab": self.vocab,
            "best_dev_f1": self.best_dev_f1,
            "epoch": self.epoch,
            "use_table": self.use_table,
            "tensors": list(self.state),
        }
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(json.dumps(meta).encode("utf-8") + b"\n")
            for name, t in self.state.items():
                arr = t.detach().cpu().to(torch.float64).contiguous().numpy()
                shape = " ".join(str(s) for s in arr.shape)
                f.write(f"{name} f64 {arr.ndim} {shape}".rstrip().encode() + b"\n")
                f.write(arr.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as f:
            if f.readline() != MAGIC:
                raise ValueError(f"{path}: not an ONG checkpoint")
            meta = json.loads(f.readline().decode("utf-8"))
            if meta["version"] != FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            state = {}
            for expected in meta["tensors"]:
                parts = f.readline().decode().split()
                name, tag, ndim = parts[0], parts[1], int(parts[2])
                if name != expected or tag != "f64":
                    raise ValueError(f"corrupt tensor header for {expected!r}")
                shape = tuple(int(s) for s in parts[3:3 + ndim])
                count = int(np.prod(shape)) if shape else 1
                buf = f.read(8 * count)
                if len(buf) != 8 * count:
                    raise ValueError(f"truncated tensor {name!r}")
                arr = np.frombuffer(buf, dtype="<f8").reshape(shape)
                state[name] = torch.from_numpy(arr.copy())
        return cls(TrainConfig.from_dict(meta["config"]), meta["vocab"], state,
                   meta["best_dev_f1"], meta["epoch"], meta["use_table"], meta["version"])


def build_model(config: TrainConfig, vocab_size: int, use_table: bool = True) -> OngModel:
    return OngModel(
        vocab_size, tok_dim=config.tok_dim, pos_dim=config.pos_dim, hidden=config.hidden,
        gcn_dim=config.gcn_dim, gcn_layers=config.gcn_layers, head_dim=config.head_dim,
        gamma=config.gamma, alpha=config.alpha, beta=config.beta, mask=config.mask,
        max_rel=config.max_rel, edge_layers=config.edge_layers, direct_adj=config.direct_adj,
        separate_reg_gcn=config.separate_reg_gcn, use_table=use_table)


def _batches(items: Sequence, size: int):
    for k in range(0, len(items), size):
        yield items[k:k + size]


def predict_all(model: OngModel, vocab: Vocab, sentences: Sequence[Sentence],
                vectors=None, batch: int = 64) -> list[set]:
    """Greedy per-token argmax decoded into spans, one set per sentence."""
    examples = make_examples(sentences, vocab, vectors)
    out = []
    model.eval()
    for chunk in _batches(examples, batch):
        for labels in model.predict_labels(collate(chunk)):
            out.append(decode_bio([LABELS[k] for k in labels]))
    return out


def _as_model(checkpoint) -> tuple[OngModel, Vocab]:
    if isinstance(checkpoint, Checkpoint):
        return checkpoint.model(), checkpoint.vocabulary()
    return checkpoint


def evaluate(checkpoint, data: Sequence[Sentence], vectors=None) -> Metrics:
    """Span P/R/F1 of a checkpoint (or a ``(model, vocab)`` pair) on ``data``."""
    model, vocab = _as_model(checkpoint)
    if not data:
        return Metrics.from_counts(0, 0, 0)
    pred = predict_all(model, vocab, data, vectors)
    return span_metrics(pred, [set(s.opinion_spans) for s in data])


def predict(checkpoint, sentence: Sentence, target_span=None, vectors=None) -> set:
    model, vocab = _as_model(checkpoint)
    if target_span is not None and tuple(target_span) != sentence.target_span:
        sentence = Sentence(sentence.tokens, sentence.heads, target_span, ())
    vecs = None if vectors is None else [vectors]
    return predict_all(model, vocab, [sentence], vecs)[0]


def bucket_key(sentence: Sentence) -> str | None:
    """Fold of the longest target-opinion tree distance; None without opinions."""
    idx = sentence.opinion_indices()
    if not idx:
        return None
    d = tree_distances(sentence.tree, sentence.target_span)
    far = max(d[i] for i in idx)
    return str(far) if far <= 3 else ">3"


def bucket_by_distance(data: Sequence[Sentence]) -> dict[str, list[Sentence]]:
    folds: dict[str, list[Sentence]] = {k: [] for k in BUCKETS}
    for s in data:
        key = bucket_key(s)
        if key is not None:
            folds[key].append(s)
    return folds


def _mean_breakdown(acc: dict, count: int) -> dict:
    return {k: v / count for k, v in acc.items()}


def train(config: TrainConfig, train_data: Sequence[Sentence], dev_data: Sequence[Sentence],
          train_vectors=None, dev_vectors=None,
          on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Mini-batch training with best-dev-F1 model selection."""
    if not train_data:
        raise ValueError("no training data")
    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    use_table = train_vectors is None
    if not use_table:
        config = replace(config, tok_dim=int(np.asarray(train_vectors[0]).shape[1]))
    vocab = Vocab.build(train_data) if use_table else Vocab()
    model = build_model(config, len(vocab), use_table)
    examples = make_examples(train_data, vocab, train_vectors)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    best_f1, best_epoch, best_state = -1.0, 0, None
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = list(range(len(examples)))
        rng.shuffle(order)
        acc = {"pred": 0.0, "kl": 0.0, "reg": 0.0, "total": 0.0}
        for chunk in _batches([examples[i] for i in order], config.batch):
            loss = model.loss(collate(chunk))
            if not torch.isfinite(torch.as_tensor(loss.total)).all():
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.total.backward()
            if config.clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip)
            opt.step()
            for k, v in loss.to_dict().items():
                acc[k] += v * len(chunk)
        model.eval()
        dev = evaluate((model, vocab), dev_data, dev_vectors) if dev_data else None
        record = {"epoch": epoch, "loss": _mean_breakdown(acc, len(examples)),
                  "dev": dev.to_dict() if dev else None}
        log.info("epoch %d: %s", epoch, record)
        if on_epoch:
            on_epoch(record)
        score = dev.f1 if dev else 0.0
        if best_state is None or score > best_f1:
            best_f1, best_epoch = score, epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    return Checkpoint(config, list(vocab.itos), best_state, best_f1, best_epoch, use_table)
