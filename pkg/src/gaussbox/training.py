"""Self-supervised training of the projection network from taxonomy edges.

Every edge of the seed taxonomy becomes one instance: the child, its parent,
and a handful of structurally confusable negatives (siblings, uncles,
cousins, grandparents; topped up uniformly when that pool runs short).
Batches are projected, the triple losses evaluated in closed form, gradients
pushed back through the network by hand, and parameters updated with
decoupled weight decay on top of adaptive moments.  Everything downstream of
the seed integer is deterministic on a single worker.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from gaussbox.embeddings import EmbeddingError, EmbeddingTable
from gaussbox.losses import LossHyper, batch_triple_terms
from gaussbox.projection import (
    ACTIVATIONS,
    ParamGrads,
    ProjectionParams,
    backward_batch,
    forward_batch,
    init_params,
)
from gaussbox.ranking import rank_anchors
from gaussbox.taxonomy import TaxonomyGraph, hard_negative_pool


class ConfigError(ValueError):
    """Bad training-config file: unknown key or unparseable value."""


class DivergenceError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run; all fields have defaults and
    map one-to-one onto `key=value` lines of the config file."""

    dim: int = 64                 # box dimensionality
    hidden: int = 64
    dropout: float = 0.2
    activation: str = "relu"
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 125
    negatives: int = 10
    margin: float = 1.0
    lam: float = 0.3
    coverage: float = 1.5
    min_var: float = 0.01
    max_var: float = 10.0
    w_sym: float = 0.45
    w_asym: float = 0.45
    w_vol: float = 0.10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    patience: int = 0             # 0 disables early stopping
    val_fraction: float = 0.0
    neg_aggregate: str = "mean"
    exclude_ancestor_negatives: bool = False

    def __post_init__(self) -> None:
        if self.dim < 1 or self.hidden < 1:
            raise ValueError("dim and hidden must be at least 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.negatives < 1:
            raise ValueError("batch_size, epochs, and negatives must be at least 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.patience < 0:
            raise ValueError("patience must be nonnegative")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError("betas must lie in (0, 1)")
        if self.neg_aggregate not in ("mean", "sum"):
            raise ValueError(f"unknown neg_aggregate {self.neg_aggregate!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.loss_hyper()  # validates the loss fields

    def loss_hyper(self) -> LossHyper:
        return LossHyper(
            margin=self.margin,
            lam=self.lam,
            coverage=self.coverage,
            min_var=self.min_var,
            max_var=self.max_var,
            w_sym=self.w_sym,
            w_asym=self.w_asym,
            w_vol=self.w_vol,
        )


def _field_types():
    return {f.name: f.type for f in fields(TrainConfig)}


def save_config(cfg: TrainConfig, path) -> None:
    lines = []
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_config(path) -> TrainConfig:
    """Parse `key=value` lines; `#` starts a comment, unknown keys fail."""
    known = {f.name: f for f in fields(TrainConfig)}
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        overrides[key] = _parse_value(key, value, known[key].type, path, lineno)
    try:
        return TrainConfig(**overrides)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None


def _parse_value(key, value, type_name, path, lineno):
    type_name = str(type_name)
    try:
        if type_name == "bool":
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(
            f"{path}:{lineno}: cannot parse {value!r} for key {key!r} as {type_name}"
        ) from None


def config_hash(cfg: TrainConfig) -> str:
    payload = "\n".join(f"{f.name}={getattr(cfg, f.name)!r}" for f in fields(TrainConfig))
    return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class TrainingInstance:
    child: str
    parent: str
    negatives: tuple


def generate_instances(
    graph: TaxonomyGraph,
    n_negatives: int,
    rng_seed: int,
    exclude_ancestors: bool = False,
):
    """One instance per edge, with up to n_negatives distinct negatives.

    Negatives come from the hard pool first (siblings, uncles, cousins,
    grandparents) and are topped up uniformly from nodes that are neither the
    child, its parents, nor its descendants.  With exclude_ancestors the pool
    and the top-up both drop every ancestor as well.  Tiny graphs may not be
    able to fill the quota; the instance then carries fewer negatives.
    """
    rng = np.random.default_rng(rng_seed)
    instances = []
    for parent, child in graph.edges():
        pool = sorted(hard_negative_pool(graph, child, exclude_ancestors=exclude_ancestors))
        take = min(n_negatives, len(pool))
        picked = [pool[int(i)] for i in rng.choice(len(pool), size=take, replace=False)]
        if len(picked) < n_negatives:
            banned = {child} | graph.parents(child) | graph.descendants(child) | set(picked)
            if exclude_ancestors:
                banned |= graph.ancestors(child)
            extra_pool = sorted(set(graph.ids()) - banned)
            take = min(n_negatives - len(picked), len(extra_pool))
            if take:
                picked += [extra_pool[int(i)] for i in rng.choice(len(extra_pool), size=take, replace=False)]
        instances.append(TrainingInstance(child=child, parent=parent, negatives=tuple(picked)))
    return tuple(instances)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def init(cls, params_list) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params_list],
            v=[np.zeros_like(p) for p in params_list],
        )


def optimizer_step(
    state: AdamState,
    params_list,
    grads_list,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
):
    """Adaptive-moment update with bias correction and decoupled weight decay.

    Parameter arrays are updated in place; returns (state, params_list)."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params_list, grads_list, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        step = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay:
            step = step + lr * weight_decay * p
        p -= step
    return state, params_list


# ---------------------------------------------------------------------------
# history


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss_total: float
    loss_sym: float
    loss_align: float
    loss_diverge: float
    loss_reg: float
    loss_clip: float
    clamp_events: int
    grad_norm: float
    val_mrr: float | None
    seconds: float


HISTORY_COLUMNS = (
    "epoch", "loss_total", "loss_sym", "loss_align", "loss_diverge",
    "loss_reg", "loss_clip", "clamp_events", "grad_norm", "val_mrr", "seconds",
)


def save_history(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for e in history:
            row = [getattr(e, c) for c in HISTORY_COLUMNS]
            row = ["" if x is None else x for x in row]
            writer.writerow(row)


def load_history(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for rec in csv.DictReader(f):
            row = {}
            for key, value in rec.items():
                if value == "":
                    row[key] = None
                elif key in ("epoch", "clamp_events"):
                    row[key] = int(value)
                else:
                    row[key] = float(value)
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# training loop


def _check_embeddings(graph: TaxonomyGraph, table: EmbeddingTable) -> None:
    missing = [i for i in graph.ids() if i not in table]
    if missing:
        shown = ", ".join(repr(m) for m in missing[:5])
        more = f" (and {len(missing) - 5} more)" if len(missing) > 5 else ""
        raise EmbeddingError(f"no embedding row for node(s) {shown}{more}")


def _validation_mrr(params, table, graph, val_instances) -> float:
    rr = []
    for inst in val_instances:
        pred = rank_anchors(params, table, inst.child, graph, "bc", gold_parents=(inst.parent,))
        rr.append(1.0 / pred.gold_ranks[0])
    return float(np.mean(rr))


def train(config: TrainConfig, seed_graph: TaxonomyGraph, embeddings: EmbeddingTable):
    """Train projection parameters on the seed taxonomy.

    Returns (params, history).  With val_fraction > 0 a slice of instances is
    held out for a per-epoch reranking check, and with patience > 0 training
    stops once that stops improving, returning the best parameters seen.
    """
    _check_embeddings(seed_graph, embeddings)
    hyper = config.loss_hyper()
    instances = generate_instances(
        seed_graph, config.negatives, config.seed,
        exclude_ancestors=config.exclude_ancestor_negatives,
    )

    rng = np.random.default_rng(config.seed)
    instances = [instances[i] for i in rng.permutation(len(instances))]
    n_val = int(config.val_fraction * len(instances) + 0.5)
    val_instances = instances[:n_val]
    train_instances = instances[n_val:]
    if not train_instances:
        raise ValueError("validation split leaves no training instances")

    params = init_params(
        embeddings.dim, config.hidden, config.dim, config.seed,
        dropout=config.dropout, activation=config.activation,
    )
    params.config_hash = config_hash(config)
    state = AdamState.init(params.as_list())

    history: list[EpochStats] = []
    best_mrr = -np.inf
    best_params = None
    stale = 0

    # history reports each term at the weight it enters the total, so the
    # component columns add up to loss_total row by row
    comp_weights = {
        "sym": hyper.w_sym,
        "align": hyper.w_asym,
        "diverge": hyper.w_asym * hyper.lam,
        "reg": hyper.w_vol,
        "clip": hyper.w_vol,
        "total": 1.0,
    }

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_instances))
        comp_sums = dict.fromkeys(comp_weights, 0.0)
        clamp_events = 0
        grad_norms = []

        for start in range(0, len(order), config.batch_size):
            batch = [train_instances[int(i)] for i in order[start : start + config.batch_size]]
            comps, grads, clamps = _run_batch(params, batch, embeddings, hyper, config, rng)
            clamp_events += clamps
            for key in comp_sums:
                comp_sums[key] += comp_weights[key] * float(np.sum(comps[key]))
            bad = ~np.isfinite(comps["total"])
            if np.any(bad):
                inst = batch[int(np.argmax(bad))]
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} for instance "
                    f"(child {inst.child!r}, parent {inst.parent!r}); try lowering lr"
                )
            grad_norms.append(float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.as_list()))))
            optimizer_step(
                state, params.as_list(), grads.as_list(),
                lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                eps=config.eps, weight_decay=config.weight_decay,
            )

        n = len(train_instances)
        val_mrr = None
        if val_instances:
            val_mrr = _validation_mrr(params, embeddings, seed_graph, val_instances)
        history.append(EpochStats(
            epoch=epoch,
            loss_total=comp_sums["total"] / n,
            loss_sym=comp_sums["sym"] / n,
            loss_align=comp_sums["align"] / n,
            loss_diverge=comp_sums["diverge"] / n,
            loss_reg=comp_sums["reg"] / n,
            loss_clip=comp_sums["clip"] / n,
            clamp_events=clamp_events,
            grad_norm=float(np.mean(grad_norms)),
            val_mrr=val_mrr,
            seconds=time.perf_counter() - t0,
        ))

        if val_instances and config.patience > 0:
            if val_mrr > best_mrr + 1e-12:
                best_mrr = val_mrr
                best_params = params.copy()
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break

    if best_params is not None:
        best_params.config_hash = params.config_hash
        return best_params, history
    return params, history


def _run_batch(params, batch, embeddings, hyper, config, rng):
    """Forward, loss, and backward for one batch of instances.

    Instances are grouped by negative count so arrays stay rectangular; the
    returned gradients are averaged over the whole batch.
    """
    groups: dict[int, list] = {}
    for inst in batch:
        groups.setdefault(len(inst.negatives), []).append(inst)

    total_grads = None
    all_comps = {key: [] for key in ("sym", "align", "diverge", "reg", "clip", "total")}
    clamp_events = 0
    scale = 1.0 / len(batch)

    for n_neg in sorted(groups):
        insts = groups[n_neg]
        if n_neg == 0:
            raise ValueError(
                f"instance for child {insts[0].child!r} has no negatives; "
                "the taxonomy is too small to train on"
            )
        X_c = embeddings.matrix([i.child for i in insts])
        X_p = embeddings.matrix([i.parent for i in insts])
        X_n = embeddings.matrix([n for i in insts for n in i.negatives])

        mu_c, o_c, tr_c = forward_batch(params, X_c, mode="train", rng=rng)
        mu_p, o_p, tr_p = forward_batch(params, X_p, mode="train", rng=rng)
        mu_n_flat, o_n_flat, tr_n = forward_batch(params, X_n, mode="train", rng=rng)
        B = len(insts)
        mu_n = mu_n_flat.reshape(B, n_neg, -1)
        o_n = o_n_flat.reshape(B, n_neg, -1)

        comps, grads, clamps = batch_triple_terms(
            mu_c, o_c, mu_p, o_p, mu_n, o_n, hyper, neg_aggregate=config.neg_aggregate
        )
        clamp_events += clamps
        for key in all_comps:
            all_comps[key].append(comps[key])

        g_mu_c, g_o_c, g_mu_p, g_o_p, g_mu_n, g_o_n = grads
        pg = backward_batch(params, tr_c, scale * g_mu_c, scale * g_o_c)
        _accumulate(pg, backward_batch(params, tr_p, scale * g_mu_p, scale * g_o_p))
        _accumulate(pg, backward_batch(
            params, tr_n,
            scale * g_mu_n.reshape(B * n_neg, -1),
            scale * g_o_n.reshape(B * n_neg, -1),
        ))
        if total_grads is None:
            total_grads = pg
        else:
            _accumulate(total_grads, pg)

    comps = {key: np.concatenate(vals) for key, vals in all_comps.items()}
    return comps, total_grads, clamp_events


def _accumulate(into: ParamGrads, other: ParamGrads) -> None:
    for a, b in zip(into.as_list(), other.as_list()):
        a += b
