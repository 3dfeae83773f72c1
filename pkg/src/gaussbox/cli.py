"""Command-line front door.

Subcommands cover the full pipeline: holdout splitting, pseudo-embedding
generation, training, reranking evaluation, box export at a chosen sigma
level, and hyperparameter sweeps with a static plot.  Every command records
a JSON run manifest next to its outputs (inputs are checksummed, seeds and
config hash included) so a run can be audited or reproduced later.

Exit codes: 0 success, 2 usage or validation error, 3 data error
(unreadable or inconsistent input files), 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from gaussbox import __version__
from gaussbox.embeddings import (
    EmbeddingError,
    EmbeddingTable,
    load_embeddings,
    pseudo_clustered_embeddings,
    pseudo_hash_embeddings,
    save_embeddings,
)
from gaussbox.projection import (
    CheckpointError,
    check_dims,
    forward_batch,
    load_params,
    save_params,
)
from gaussbox.ranking import SCORERS, evaluate_queries, save_predictions, save_report
from gaussbox.taxonomy import (
    TaxonomyError,
    load_split,
    load_taxonomy,
    save_split,
    save_taxonomy,
    split_leaves,
)
from gaussbox.training import (
    DivergenceError,
    TrainConfig,
    config_hash,
    load_config,
    save_history,
    train,
)

SEED_NODES = "seed.nodes.tsv"
SEED_EDGES = "seed.edges.tsv"
HOLDOUT = "holdout.tsv"


@dataclass(frozen=True)
class RunManifest:
    tool_version: str
    command: str
    config_hash: str | None
    inputs: dict
    outputs: tuple
    seeds: dict
    timestamp: float


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _checksums(paths) -> dict:
    return {str(p): _sha256(p) for p in paths}


def write_manifest(manifest: RunManifest, path) -> None:
    """Serialize atomically: a reader never sees a half-written manifest."""
    path = Path(path)
    payload = json.dumps(dataclasses.asdict(manifest), indent=2, sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _manifest(command, inputs, outputs, seeds, cfg_hash=None) -> RunManifest:
    return RunManifest(
        tool_version=__version__,
        command=command,
        config_hash=cfg_hash,
        inputs=_checksums(inputs),
        outputs=tuple(str(o) for o in outputs),
        seeds=seeds,
        timestamp=time.time(),
    )


def _load_seed_dir(path) -> "TaxonomyGraph":
    d = Path(path)
    return load_taxonomy(d / SEED_NODES, d / SEED_EDGES)


# ---------------------------------------------------------------------------
# commands


def cmd_split(args) -> int:
    graph = load_taxonomy(args.nodes, args.edges)
    split = split_leaves(graph, args.fraction, args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_taxonomy(split.seed, out / SEED_NODES, out / SEED_EDGES)
    save_split(split, out / HOLDOUT)
    write_manifest(
        _manifest(
            "split",
            [args.nodes, args.edges],
            [out / SEED_NODES, out / SEED_EDGES, out / HOLDOUT],
            {"rng_seed": args.seed},
        ),
        out / "manifest.json",
    )
    print(f"held out {len(split.queries)} of {graph.num_nodes} nodes -> {out}")
    return 0


def cmd_pseudo_embed(args) -> int:
    graph = load_taxonomy(args.nodes, args.edges)
    inputs = [args.nodes, args.edges]
    if args.mode == "hash":
        table = pseudo_hash_embeddings(graph.ids(), args.dim, args.seed)
    elif args.mode.startswith("clustered:"):
        prefix = args.mode.removeprefix("clustered:")
        if not prefix:
            raise ValueError("clustered mode needs a taxonomy path prefix, e.g. clustered:data/full")
        tree_nodes, tree_edges = f"{prefix}.nodes.tsv", f"{prefix}.edges.tsv"
        tree = load_taxonomy(tree_nodes, tree_edges)
        missing = [i for i in graph.ids() if not tree.has(i)]
        if missing:
            raise EmbeddingError(
                f"clustered tree lacks node(s) {', '.join(repr(m) for m in missing[:5])}"
            )
        full = pseudo_clustered_embeddings(tree, args.dim, args.seed)
        table = EmbeddingTable.from_dict({i: full.vector(i) for i in graph.ids()})
        inputs += [tree_nodes, tree_edges]
    else:
        raise ValueError(f"unknown mode {args.mode!r}; expected hash or clustered:<tree>")

    save_embeddings(table, args.out)
    write_manifest(
        _manifest("pseudo-embed", inputs, [args.out], {"seed": args.seed}),
        f"{args.out}.manifest.json",
    )
    print(f"wrote {len(table)} vectors of dim {table.dim} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    graph = load_taxonomy(args.nodes, args.edges)
    table = load_embeddings(args.embeddings)

    params, history = train(cfg, graph, table)

    save_params(params, args.out_checkpoint)
    save_history(history, args.history)
    inputs = [args.nodes, args.edges, args.embeddings]
    if args.config:
        inputs.insert(0, args.config)
    write_manifest(
        _manifest(
            "train", inputs, [args.out_checkpoint, args.history],
            {"seed": cfg.seed}, cfg_hash=config_hash(cfg),
        ),
        f"{args.out_checkpoint}.manifest.json",
    )
    last = history[-1]
    tail = "" if last.val_mrr is None else f", val_mrr {last.val_mrr:.4f}"
    print(f"trained {last.epoch} epochs, final loss {last.loss_total:.4f}{tail}")
    return 0


def _parse_ks(text: str):
    try:
        ks = tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise ValueError(f"cannot parse --k list {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"--k values must be positive, got {text!r}")
    return ks


def cmd_eval(args) -> int:
    params = load_params(args.checkpoint)
    graph = _load_seed_dir(args.seed_taxonomy)
    queries, _, _ = load_split(args.queries)
    table = load_embeddings(args.embeddings)
    ks = _parse_ks(args.k)

    report, preds = evaluate_queries(params, table, queries, graph, scorer=args.scorer, ks=ks)

    prefix = f"{args.report}.{args.scorer}"
    txt, csv_path, preds_path = f"{prefix}.txt", f"{prefix}.csv", f"{prefix}.preds.tsv"
    save_report(report, txt, csv_path)
    save_predictions(preds, preds_path)
    seed_dir = Path(args.seed_taxonomy)
    write_manifest(
        _manifest(
            "eval",
            [args.checkpoint, seed_dir / SEED_NODES, seed_dir / SEED_EDGES,
             args.queries, args.embeddings],
            [txt, csv_path, preds_path],
            {}, cfg_hash=params.config_hash or None,
        ),
        f"{prefix}.manifest.json",
    )
    for line in report.lines():
        print(line)
    return 0


def cmd_export_boxes(args) -> int:
    params = load_params(args.checkpoint)
    graph = load_taxonomy(args.nodes, args.edges)
    table = load_embeddings(args.embeddings)
    missing = [i for i in graph.ids() if i not in table]
    if missing:
        raise EmbeddingError(
            f"no embedding row for node(s) {', '.join(repr(m) for m in missing[:5])}"
        )
    check_dims(params, in_dim=table.dim)

    ids = graph.ids()
    centers, offsets, _ = forward_batch(params, table.matrix(ids), mode="eval")
    offsets = args.sigma * offsets

    lines = [f"dim\t{params.out_dim}\tsigma\t{args.sigma}"]
    for i, node in enumerate(ids):
        c = ",".join(repr(float(x)) for x in centers[i])
        o = ",".join(repr(float(x)) for x in offsets[i])
        lines.append(f"{node}\t{c}\t{o}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(
        _manifest(
            "export-boxes",
            [args.checkpoint, args.nodes, args.edges, args.embeddings],
            [args.out], {"sigma": args.sigma},
            cfg_hash=params.config_hash or None,
        ),
        f"{args.out}.manifest.json",
    )
    print(f"exported {len(ids)} boxes at sigma={args.sigma} -> {args.out}")
    return 0


SWEEP_PARAMS = ("dim", "lambda", "C")


def _sweep_config(cfg: TrainConfig, param: str, token: str) -> TrainConfig:
    if param == "dim":
        return dataclasses.replace(cfg, dim=int(token))
    if param == "lambda":
        return dataclasses.replace(cfg, lam=float(token))
    return dataclasses.replace(cfg, coverage=float(token))


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep param {args.param!r}; expected one of {SWEEP_PARAMS}")
    tokens = [t for t in args.values.split(",") if t]
    if not tokens:
        raise ValueError("--values must list at least one value")
    base = load_config(args.config) if args.config else TrainConfig()
    configs = [_sweep_config(base, args.param, tok) for tok in tokens]

    graph = _load_seed_dir(args.seed_taxonomy)
    seed_dir = Path(args.seed_taxonomy)
    queries, _, _ = load_split(seed_dir / HOLDOUT)
    table = load_embeddings(args.embeddings)

    rows = []
    for tok, cfg in zip(tokens, configs):
        params, _ = train(cfg, graph, table)
        report, _ = evaluate_queries(params, table, queries, graph, scorer=args.scorer)
        rows.append((tok, report))
        print(f"{args.param}={tok}: mrr {report.mrr:.4f}, recall@1 {report.recall[1]:.4f}")

    csv_path, png_path = f"{args.out_prefix}.csv", f"{args.out_prefix}.png"
    header = ["param", "value", "mr", "mrr"]
    header += [f"recall@{k}" for k in (1, 5, 10)] + [f"hit@{k}" for k in (1, 5, 10)]
    lines = [",".join(header)]
    for tok, r in rows:
        cells = [args.param, tok, repr(r.mr), repr(r.mrr)]
        cells += [repr(r.recall[k]) for k in (1, 5, 10)]
        cells += [repr(r.hit[k]) for k in (1, 5, 10)]
        lines.append(",".join(cells))
    Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    _plot_sweep(args.param, tokens, [r.mrr for _, r in rows], png_path)
    write_manifest(
        _manifest(
            "sweep",
            ([args.config] if args.config else [])
            + [seed_dir / SEED_NODES, seed_dir / SEED_EDGES, seed_dir / HOLDOUT, args.embeddings],
            [csv_path, png_path],
            {"seed": base.seed}, cfg_hash=config_hash(base),
        ),
        f"{args.out_prefix}.manifest.json",
    )
    return 0


def _plot_sweep(param, tokens, mrrs, png_path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([float(t) for t in tokens], mrrs, marker="o")
    ax.set_xlabel(param)
    ax.set_ylabel("MRR")
    ax.set_title(f"reranking MRR vs {param}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaussbox",
        description="Taxonomy expansion with Gaussian box embeddings.",
    )
    parser.add_argument("--version", action="version", version=f"gaussbox {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="hold out leaf nodes as attachment queries")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pseudo-embed", help="generate synthetic input embeddings")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--mode", default="hash",
        help="hash, or clustered:<prefix> where <prefix>.nodes.tsv/.edges.tsv exist",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pseudo_embed)

    p = sub.add_parser("train", help="train the projection network")
    p.add_argument("--config", help="key=value config file (defaults when omitted)")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--history", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rerank seed nodes for held-out queries")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed-taxonomy", required=True, help="directory written by split")
    p.add_argument("--queries", required=True, help="holdout manifest TSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--scorer", choices=SCORERS, default="bc")
    p.add_argument("--k", default="1,5,10", help="comma-separated cutoffs")
    p.add_argument("--report", required=True, help="output path prefix")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-boxes", help="export boxes at a sigma level")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--sigma", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_boxes)

    p = sub.add_parser("sweep", help="train+eval across one hyperparameter")
    p.add_argument("--param", required=True, help="dim, lambda, or C")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--config", help="base config file")
    p.add_argument("--seed-taxonomy", required=True, help="directory written by split")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--scorer", choices=SCORERS, default="bc")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (TaxonomyError, EmbeddingError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        # ConfigError included: bad config files are usage errors
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
