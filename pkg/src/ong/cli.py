"""Command-line entry point: ``ong <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
Machine-readable results go to stdout as JSON lines; the resolved config is
printed to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace

from .corpus import CorpusError, format_corpus, gen_synthetic, read_corpus, split_train_dev
from .encoder import SidecarError, read_sidecar
from .objective import ABLATIONS, VARIANTS, AblationMask
from .trainer import (BUCKETS, Checkpoint, DivergenceError, TrainConfig, bucket_key, evaluate,
                      predict_all, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

_DEFAULTS = TrainConfig()

# flag -> (TrainConfig field, type, help)
CONFIG_FLAGS = {
    "--data": ("data", str, "training corpus (tab-separated records)"),
    "--test": ("test", str, "test corpus evaluated with the selected checkpoint"),
    "--dev-ratio": ("dev_ratio", float, "fraction of --data held out for model selection"),
    "--seed": ("seed", int, "random seed for splitting, initialization and shuffling"),
    "--epochs": ("epochs", int, "training epochs"),
    "--batch": ("batch", int, "mini-batch size"),
    "--lr": ("lr", float, "Adam learning rate"),
    "--tok-dim": ("tok_dim", int, "token embedding size (ignored with --embeddings)"),
    "--pos-dim": ("pos_dim", int, "relative-position embedding size"),
    "--hidden": ("hidden", int, "ON-LSTM hidden units"),
    "--gcn-dim": ("gcn_dim", int, "GCN layer width"),
    "--gcn-layers": ("gcn_layers", int, "number of GCN layers"),
    "--head-dim": ("head_dim", int, "hidden width of the feed-forward networks"),
    "--gamma": ("gamma", float, "weight of the dependency adjacency in A"),
    "--alpha": ("alpha", float, "weight of the KL consistency loss"),
    "--beta": ("beta", float, "weight of the representation regularizer"),
    "--clip": ("clip", float, "gradient-norm clip (0 disables)"),
    "--max-rel": ("max_rel", int, "relative positions are clamped to +-max-rel"),
    "--edge-layers": ("edge_layers", int, "layers in the target-importance scorer (1 or 2)"),
    "--embeddings": ("embeddings", str, "sidecar of precomputed token vectors for --data"),
    "--out": ("out", str, "checkpoint output path"),
}
CONFIG_SWITCHES = {
    "--direct-adj": ("direct_adj", "learn A directly from A^d and distances"),
    "--separate-reg-gcn": ("separate_reg_gcn", "give the regularizer its own GCN parameters"),
}
MASK_SWITCHES = {
    "--no-kl": "drop the KL consistency loss",
    "--no-reg": "drop the representation regularizer",
    "--no-gcn": "remove the GCN (head reads the recurrent states only)",
    "--use-lstm": "replace the ON-LSTM with a plain LSTM (implies --no-kl)",
    "--no-ad": "remove the dependency adjacency from A",
    "--no-at": "remove the target-importance adjacency from A",
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_data_flags(p, with_ckpt=True):
    if with_ckpt:
        p.add_argument("--ckpt", required=True, help="checkpoint written by train")
    p.add_argument("--data", required=True, help="corpus to run on")
    p.add_argument("--embeddings", help="sidecar of precomputed token vectors for --data")


def _add_config_flags(p, variant_choices=None, variant_help="", variant_append=False):
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", help="JSON file of config fields")
    for flag, (name, typ, text) in CONFIG_FLAGS.items():
        default = getattr(_DEFAULTS, name)
        suffix = f" (default: {default})" if default is not None else ""
        g.add_argument(flag, dest=name, type=typ, default=argparse.SUPPRESS, help=text + suffix)
    g.add_argument("--test-embeddings", dest="test_embeddings", default=None,
                   help="sidecar of precomputed token vectors for --test")
    for flag, (name, text) in CONFIG_SWITCHES.items():
        g.add_argument(flag, dest=name, action="store_true", default=argparse.SUPPRESS, help=text)
    m = p.add_argument_group("ablations")
    m.add_argument("--variant", dest="variant", choices=variant_choices,
                   action="append" if variant_append else "store", help=variant_help)
    for flag, text in MASK_SWITCHES.items():
        m.add_argument(flag, action="store_true", help=text)
    m.add_argument("--reg-pool", choices=("graph", "maxpool"), default=None,
                   help="regularizer pooling: pruned-tree GCN or max-pooling (default: graph)")


def build_parser() -> Parser:
    parser = Parser(prog="ong", description="Syntax-aware targeted opinion word extraction.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_config_flags(p, ["ong", *ABLATIONS], "start from a named variant's ablation mask")

    p = sub.add_parser("ablate", help="train and evaluate named ablation variants")
    _add_config_flags(p, ABLATIONS, "variant to run (repeatable; default: all nine)",
                      variant_append=True)

    p = sub.add_parser("eval", help="span precision/recall/F1 of a checkpoint")
    _add_data_flags(p)

    p = sub.add_parser("predict", help="predicted opinion spans, one JSON line per example")
    _add_data_flags(p)

    p = sub.add_parser("bucket-eval", help="metrics per target-opinion distance fold")
    _add_data_flags(p)

    p = sub.add_parser("inspect", help="dump the syntax matrices of one example as JSON")
    p.add_argument("--data", required=True, help="corpus holding the example")
    p.add_argument("--index", type=int, default=0, help="0-based example index (default: 0)")
    p.add_argument("--ckpt", help="checkpoint providing the target-importance scorer "
                                  "(default: a freshly initialized one)")
    p.add_argument("--gamma", type=float, default=None,
                   help=f"A^d weight in A (default: checkpoint value or {_DEFAULTS.gamma})")
    p.add_argument("--seed", type=int, default=_DEFAULTS.seed,
                   help=f"seed for a fresh scorer (default: {_DEFAULTS.seed})")

    p = sub.add_parser("gen-data", help="write a synthetic corpus")
    p.add_argument("--n", type=int, default=500, help="number of sentences (default: 500)")
    p.add_argument("--min-len", type=int, default=5, help="minimum length (default: 5)")
    p.add_argument("--max-len", type=int, default=12, help="maximum length (default: 12)")
    p.add_argument("--p-opinion", type=float, default=0.8,
                   help="probability a sentence has an opinion (default: 0.8)")
    p.add_argument("--seed", type=int, default=_DEFAULTS.seed,
                   help=f"random seed (default: {_DEFAULTS.seed})")
    p.add_argument("--out", help="output path (default: stdout)")
    return parser


def _load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    mask_keys = {fl.name for fl in fields(AblationMask)}
    cfg = {k: v for k, v in raw.items() if k not in mask_keys}
    mask = dict(cfg.pop("mask", {}) or {})
    mask.update({k: v for k, v in raw.items() if k in mask_keys})
    if mask:
        cfg["mask"] = mask
    return cfg


def _mask_from_args(args, base: AblationMask) -> AblationMask:
    m = base.to_dict()
    if args.no_kl:
        m["use_kl"] = False
    if args.no_reg:
        m["use_reg"] = False
    if args.no_gcn:
        m["use_gcn"] = False
    if args.use_lstm:
        m.update(use_onlstm=False, use_plain_lstm=True, use_kl=False)
    if args.no_ad:
        m["use_ad"] = False
    if args.no_at:
        m["use_at"] = False
    if args.reg_pool:
        m["reg_pool"] = args.reg_pool
    return AblationMask(**m)


def resolve_config(args, base_mask: AblationMask | None = None) -> TrainConfig:
    """defaults < --config file < --variant < explicit flags."""
    values = TrainConfig().to_dict()
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        if "mask" in file_cfg:
            file_cfg["mask"] = {**values["mask"], **file_cfg["mask"]}
        values.update(file_cfg)
    names = [n for n, _, _ in CONFIG_FLAGS.values()] + [n for n, _ in CONFIG_SWITCHES.values()]
    for name in names:
        if hasattr(args, name):
            values[name] = getattr(args, name)
    try:
        mask = AblationMask(**values.pop("mask"))
        if base_mask is not None:
            mask = base_mask
        values["mask"] = _mask_from_args(args, mask)
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _emit(obj) -> None:
    print(json.dumps(obj), flush=True)


def _print_config(cfg: dict) -> None:
    print(json.dumps({"config": cfg}), file=sys.stderr, flush=True)


def _vectors(path):
    return None if path is None else read_sidecar(path)


def _train_eval(cfg: TrainConfig, test_embeddings=None, log_epochs=True):
    if not cfg.data:
        raise UsageError("--data is required")
    data = read_corpus(cfg.data)
    vectors = _vectors(cfg.embeddings)
    if vectors is not None and len(vectors) != len(data):
        raise SidecarError(f"sidecar has {len(vectors)} examples for {len(data)} sentences")
    indexed = list(range(len(data)))
    tr_idx, dev_idx = split_train_dev(indexed, cfg.dev_ratio, cfg.seed)
    pick = lambda idx, xs: None if xs is None else [xs[i] for i in idx]
    train_data, dev_data = pick(tr_idx, data), pick(dev_idx, data)
    ckpt = train(cfg, train_data, dev_data, pick(tr_idx, vectors), pick(dev_idx, vectors),
                 on_epoch=_emit if log_epochs else None)
    test_metrics = None
    if cfg.test:
        test_data = read_corpus(cfg.test)
        test_metrics = evaluate(ckpt, test_data, _vectors(test_embeddings))
    return ckpt, ckpt.model(), dev_data, pick(dev_idx, vectors), test_metrics


def cmd_train(args) -> int:
    base = VARIANTS[args.variant] if args.variant else None
    cfg = resolve_config(args, base)
    _print_config(cfg.to_dict())
    ckpt, _, _, _, test_metrics = _train_eval(cfg, args.test_embeddings)
    if cfg.out:
        ckpt.save(cfg.out)
    _emit({"best_epoch": ckpt.epoch, "best_dev_f1": ckpt.best_dev_f1})
    if test_metrics is not None:
        _emit({"test": test_metrics.to_dict()})
    return EXIT_OK


def cmd_ablate(args) -> int:
    variants = args.variant or ABLATIONS
    for name in variants:
        cfg = resolve_config(args, VARIANTS[name])
        if cfg.out:
            cfg = replace(cfg, out=f"{cfg.out}.{name}")
        _print_config({"variant": name, **cfg.to_dict()})
        ckpt, model, dev, dev_vec, test_metrics = _train_eval(cfg, args.test_embeddings,
                                                              log_epochs=False)
        if cfg.out:
            ckpt.save(cfg.out)
        metrics = test_metrics
        if metrics is None:
            metrics = evaluate((model, ckpt.vocabulary()), dev, dev_vec)
        _emit({"variant": name, **metrics.to_dict()})
    return EXIT_OK


def _load_for_eval(args):
    _print_config({"command": args.command, "ckpt": args.ckpt, "data": args.data,
                   "embeddings": args.embeddings})
    ckpt = Checkpoint.load(args.ckpt)
    data = read_corpus(args.data)
    vectors = _vectors(args.embeddings)
    return ckpt, data, vectors


def cmd_eval(args) -> int:
    ckpt, data, vectors = _load_for_eval(args)
    _emit(evaluate(ckpt, data, vectors).to_dict())
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt, data, vectors = _load_for_eval(args)
    spans = predict_all(ckpt.model(), ckpt.vocabulary(), data, vectors)
    for k, s in enumerate(spans):
        _emit({"index": k, "spans": sorted([list(x) for x in s])})
    return EXIT_OK


def cmd_bucket_eval(args) -> int:
    ckpt, data, vectors = _load_for_eval(args)
    model, vocab = ckpt.model(), ckpt.vocabulary()
    for fold in BUCKETS:
        idx = [k for k, s in enumerate(data) if bucket_key(s) == fold]
        sub = [data[k] for k in idx]
        sub_vec = None if vectors is None else [vectors[k] for k in idx]
        metrics = evaluate((model, vocab), sub, sub_vec)
        _emit({"fold": fold, "examples": len(sub), **metrics.to_dict()})
    return EXIT_OK


def inspect_example(sentence, ckpt: Checkpoint | None = None, gamma: float | None = None,
                    seed: int = 1) -> dict:
    """Distances, syntax scores and every adjacency of one example."""
    import torch

    from .gcn import EdgeScorer, combine_adjacency, target_importance_matrix
    from .syntax import dep_adjacency, pruned_adjacency, syntax_scores, tree_distances

    tree = sentence.tree
    d = tree_distances(tree, sentence.target_span)
    ad = dep_adjacency(tree)
    if ckpt is not None:
        cfg = ckpt.config
        scorer = ckpt.model().edge_scorer
        gamma = cfg.gamma if gamma is None else gamma
        if scorer is None:
            scorer = EdgeScorer(cfg.edge_layers, cfg.head_dim).double()
    else:
        torch.manual_seed(seed)
        scorer = EdgeScorer(_DEFAULTS.edge_layers, _DEFAULTS.head_dim).double()
        gamma = _DEFAULTS.gamma if gamma is None else gamma
    with torch.no_grad():
        at = target_importance_matrix(torch.tensor(d, dtype=torch.float64), scorer).numpy()
    a = combine_adjacency(torch.from_numpy(ad), torch.from_numpy(at), gamma).numpy()
    anchor = (sentence.anchor, sentence.anchor)
    return {
        "distances": d,
        "syn_scores": syntax_scores(d).tolist(),
        "adj_dep": ad.tolist(),
        "adj_combined": a.tolist(),
        "adj_opinion": pruned_adjacency(a, tree, anchor, sentence.opinion_indices()).tolist(),
        "adj_other": pruned_adjacency(a, tree, anchor, sentence.other_indices()).tolist(),
    }


def cmd_inspect(args) -> int:
    _print_config({"command": "inspect", "data": args.data, "index": args.index,
                   "ckpt": args.ckpt, "gamma": args.gamma, "seed": args.seed})
    data = read_corpus(args.data)
    if not 0 <= args.index < len(data):
        raise UsageError(f"--index {args.index} out of range for {len(data)} examples")
    ckpt = Checkpoint.load(args.ckpt) if args.ckpt else None
    _emit(inspect_example(data[args.index], ckpt, args.gamma, args.seed))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    _print_config({"command": "gen-data", "n": args.n, "min_len": args.min_len,
                   "max_len": args.max_len, "p_opinion": args.p_opinion, "seed": args.seed})
    try:
        data = gen_synthetic(args.n, (args.min_len, args.max_len), args.seed, args.p_opinion)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = format_corpus(data)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bucket-eval": cmd_bucket_eval,
    "inspect": cmd_inspect,
    "gen-data": cmd_gen_data,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"ong: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CorpusError, SidecarError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"ong: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
