"""Losses over (child, parent, negative-parent) Gaussian triples.

Every loss returns its value together with analytic gradients with respect to
each distribution's mean and box offset (the offset being the square root of
the per-axis variance).  Gradients at hinge kinks use the zero subgradient;
the clamped log in the symmetric loss zeroes its branch and bumps a counter
so training can report how often degenerate negatives occur.

The same per-axis partial derivatives drive both the scalar triple API and
the batched training path, so there is a single source of truth for the
formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gaussbox import geometry
from gaussbox.geometry import DiagGaussian

# floor for the log argument in the symmetric loss when a negative overlaps
# the child almost perfectly
LOG_CLAMP = 1e-7


@dataclass(frozen=True)
class GaussTriple:
    """One training example: a child, its parent, and a corrupted parent."""

    child: DiagGaussian
    parent: DiagGaussian
    neg_parent: DiagGaussian

    def __post_init__(self) -> None:
        if not (self.child.dim == self.parent.dim == self.neg_parent.dim):
            raise ValueError(
                f"triple dimensions disagree: child {self.child.dim}, "
                f"parent {self.parent.dim}, neg_parent {self.neg_parent.dim}"
            )

    @property
    def dim(self) -> int:
        return self.child.dim


@dataclass(frozen=True)
class LossHyper:
    """Hyperparameters for the combined objective.

    margin     slack of the KL ranking hinge
    lam        weight of the coverage term inside the asymmetric loss
    coverage   multiplier applied to the parent's width surplus
    min_var    variances below this are pushed up quadratically
    max_var    variances above this accrue linear penalty
    w_sym, w_asym, w_vol    mixing weights of the three loss groups
    """

    margin: float = 1.0
    lam: float = 0.3
    coverage: float = 1.5
    min_var: float = 0.01
    max_var: float = 10.0
    w_sym: float = 0.45
    w_asym: float = 0.45
    w_vol: float = 0.10

    def __post_init__(self) -> None:
        if self.margin < 0.0:
            raise ValueError("margin must be nonnegative")
        if self.lam < 0.0:
            raise ValueError("lam must be nonnegative")
        if self.coverage <= 0.0:
            raise ValueError("coverage must be positive")
        if not 0.0 < self.min_var < self.max_var:
            raise ValueError("need 0 < min_var < max_var")
        for w in (self.w_sym, self.w_asym, self.w_vol):
            if w < 0.0:
                raise ValueError("loss weights must be nonnegative")


@dataclass
class GaussGrad:
    """Gradient of a scalar loss w.r.t. one distribution's mean and offset."""

    mean: np.ndarray
    offset: np.ndarray

    @staticmethod
    def zeros(d: int) -> "GaussGrad":
        return GaussGrad(np.zeros(d), np.zeros(d))

    def scaled(self, a: float) -> "GaussGrad":
        return GaussGrad(a * self.mean, a * self.offset)

    def add(self, other: "GaussGrad", a: float = 1.0) -> None:
        self.mean += a * other.mean
        self.offset += a * other.offset


@dataclass
class GradBundle:
    """Per-role gradients for a triple loss, plus a clamp-event counter."""

    child: GaussGrad
    parent: GaussGrad
    neg_parent: GaussGrad
    clamp_events: int = 0

    @staticmethod
    def zeros(d: int) -> "GradBundle":
        return GradBundle(GaussGrad.zeros(d), GaussGrad.zeros(d), GaussGrad.zeros(d))

    def add(self, other: "GradBundle", a: float = 1.0) -> None:
        self.child.add(other.child, a)
        self.parent.add(other.parent, a)
        self.neg_parent.add(other.neg_parent, a)
        self.clamp_events += other.clamp_events


# ---------------------------------------------------------------------------
# per-axis partial derivatives, shared by scalar and batched paths


def _bhatta_parts(mu1, v1, mu2, v2):
    """Bhattacharyya distance over the last axis with per-axis partials.

    Returns (value, d_mu1, d_v1, d_mu2, d_v2); value has the last axis
    reduced, partials keep full shape.
    """
    m = 0.5 * (v1 + v2)
    diff = mu1 - mu2
    q = diff * diff / m
    value = (
        0.125 * q.sum(-1)
        + 0.5 * np.log(m).sum(-1)
        - 0.25 * (np.log(v1).sum(-1) + np.log(v2).sum(-1))
    )
    d_mu1 = 0.25 * diff / m
    common = -q / (16.0 * m) + 0.25 / m
    return value, d_mu1, common - 0.25 / v1, -d_mu1, common - 0.25 / v2


def _kl_parts(mu_p, v_p, mu_q, v_q):
    """KL(p || q) over the last axis with per-axis partials."""
    diff = mu_q - mu_p
    d = mu_p.shape[-1]
    value = 0.5 * (
        (v_p / v_q).sum(-1)
        + (diff * diff / v_q).sum(-1)
        - d
        + np.log(v_q).sum(-1)
        - np.log(v_p).sum(-1)
    )
    d_mu_p = (mu_p - mu_q) / v_q
    d_v_p = 0.5 * (1.0 / v_q - 1.0 / v_p)
    d_v_q = 0.5 * (-v_p / (v_q * v_q) - diff * diff / (v_q * v_q) + 1.0 / v_q)
    return value, d_mu_p, d_v_p, -d_mu_p, d_v_q


def _floored_var(g: DiagGaussian) -> np.ndarray:
    return geometry._floored(g.variance)


def _offset_grad(d_var: np.ndarray, offset: np.ndarray) -> np.ndarray:
    # chain rule through variance = offset^2
    return d_var * (2.0 * offset)


def _unpack(t: GaussTriple):
    v_c = _floored_var(t.child)
    v_p = _floored_var(t.parent)
    v_n = _floored_var(t.neg_parent)
    return (
        t.child.mean, v_c, np.sqrt(v_c),
        t.parent.mean, v_p, np.sqrt(v_p),
        t.neg_parent.mean, v_n, np.sqrt(v_n),
    )


# ---------------------------------------------------------------------------
# scalar triple losses


def sym_loss(t: GaussTriple) -> tuple[float, GradBundle]:
    """Overlap loss: -ln BC(parent, child) - ln(1 - BC(neg, child))."""
    mu_c, v_c, o_c, mu_p, v_p, o_p, mu_n, v_n, o_n = _unpack(t)

    db_pos, p_mu_p, p_v_p, p_mu_c, p_v_c = _bhatta_parts(mu_p, v_p, mu_c, v_c)
    db_neg, n_mu_n, n_v_n, n_mu_c, n_v_c = _bhatta_parts(mu_n, v_n, mu_c, v_c)

    bc_neg = float(np.exp(-db_neg))
    u = 1.0 - bc_neg
    clamped = u < LOG_CLAMP
    if clamped:
        u = LOG_CLAMP
        fac = 0.0
    else:
        # d(-ln(1 - BC))/dx = -(BC / (1 - BC)) * dD_B/dx
        fac = bc_neg / u

    value = float(db_pos) - float(np.log(u))
    bundle = GradBundle(
        child=GaussGrad(p_mu_c - fac * n_mu_c, _offset_grad(p_v_c - fac * n_v_c, o_c)),
        parent=GaussGrad(p_mu_p.copy(), _offset_grad(p_v_p, o_p)),
        neg_parent=GaussGrad(-fac * n_mu_n, _offset_grad(-fac * n_v_n, o_n)),
        clamp_events=int(clamped),
    )
    return value, bundle


def align_loss(t: GaussTriple, margin: float = 1.0) -> tuple[float, GradBundle]:
    """Ranking hinge on KL: child must sit closer to its parent than to the
    corrupted parent by at least `margin` nats."""
    if margin < 0.0:
        raise ValueError("margin must be nonnegative")
    mu_c, v_c, o_c, mu_p, v_p, o_p, mu_n, v_n, o_n = _unpack(t)

    kl_p, a_mu_c, a_v_c, a_mu_p, a_v_p = _kl_parts(mu_c, v_c, mu_p, v_p)
    kl_n, b_mu_c, b_v_c, b_mu_n, b_v_n = _kl_parts(mu_c, v_c, mu_n, v_n)

    pre = float(kl_p) - float(kl_n) + margin
    if pre <= 0.0:
        return 0.0, GradBundle.zeros(t.dim)
    bundle = GradBundle(
        child=GaussGrad(a_mu_c - b_mu_c, _offset_grad(a_v_c - b_v_c, o_c)),
        parent=GaussGrad(a_mu_p.copy(), _offset_grad(a_v_p, o_p)),
        neg_parent=GaussGrad(-b_mu_n, _offset_grad(-b_v_n, o_n)),
    )
    return pre, bundle


def diverge_loss(parent: DiagGaussian, child: DiagGaussian, coverage: float = 1.5) -> tuple[float, GradBundle]:
    """Coverage hinge: KL(parent || child) must reach `coverage` times the
    parent's log-volume surplus over the child."""
    if coverage <= 0.0:
        raise ValueError("coverage must be positive")
    if parent.dim != child.dim:
        raise ValueError(f"dimension mismatch: {parent.dim} vs {child.dim}")
    v_p = _floored_var(parent)
    v_c = _floored_var(child)
    o_p, o_c = np.sqrt(v_p), np.sqrt(v_c)

    kl_pc, d_mu_p, d_v_p, d_mu_c, d_v_c = _kl_parts(parent.mean, v_p, child.mean, v_c)
    surplus = 0.5 * float(np.log(v_p).sum() - np.log(v_c).sum())

    pre = coverage * surplus - float(kl_pc)
    if pre <= 0.0:
        return 0.0, GradBundle.zeros(parent.dim)
    bundle = GradBundle(
        child=GaussGrad(-d_mu_c, _offset_grad(coverage * (-0.5 / v_c) - d_v_c, o_c)),
        parent=GaussGrad(-d_mu_p, _offset_grad(coverage * (0.5 / v_p) - d_v_p, o_p)),
        neg_parent=GaussGrad.zeros(parent.dim),
    )
    return pre, bundle


def asym_loss(t: GaussTriple, hyper: LossHyper) -> tuple[float, GradBundle]:
    """Asymmetric objective: ranking hinge plus lam times the coverage hinge."""
    a_val, a_bundle = align_loss(t, margin=hyper.margin)
    d_val, d_bundle = diverge_loss(t.parent, t.child, coverage=hyper.coverage)
    a_bundle.add(d_bundle, hyper.lam)
    return a_val + hyper.lam * d_val, a_bundle


def min_var_reg(g: DiagGaussian, threshold: float) -> tuple[float, GaussGrad]:
    """Quadratic push on variances below `threshold`, averaged over axes."""
    v = _floored_var(g)
    o = np.sqrt(v)
    d = g.dim
    gap = np.maximum(0.0, threshold - v)
    value = float(np.sum(gap * gap)) / d
    return value, GaussGrad(np.zeros(d), _offset_grad(-2.0 * gap / d, o))


def clip_reg(g: DiagGaussian, cap: float) -> tuple[float, GaussGrad]:
    """Linear penalty on variances above `cap`, averaged over axes."""
    v = _floored_var(g)
    o = np.sqrt(v)
    d = g.dim
    over = np.maximum(0.0, v - cap)
    value = float(np.sum(over)) / d
    d_v = np.where(v > cap, 1.0 / d, 0.0)
    return value, GaussGrad(np.zeros(d), _offset_grad(d_v, o))


def overall_loss(t: GaussTriple, hyper: LossHyper) -> tuple[float, GradBundle]:
    """Weighted sum of the overlap, asymmetric, and volume terms.

    The volume term applies both regularizers to all three distributions of
    the triple.
    """
    s_val, bundle = sym_loss(t)
    a_val, a_bundle = asym_loss(t, hyper)

    total = GradBundle.zeros(t.dim)
    total.add(bundle, hyper.w_sym)
    total.add(a_bundle, hyper.w_asym)

    vol_val = 0.0
    for role, g in (("child", t.child), ("parent", t.parent), ("neg_parent", t.neg_parent)):
        slot = getattr(total, role)
        r_val, r_grad = min_var_reg(g, hyper.min_var)
        c_val, c_grad = clip_reg(g, hyper.max_var)
        vol_val += r_val + c_val
        slot.add(r_grad, hyper.w_vol)
        slot.add(c_grad, hyper.w_vol)

    value = hyper.w_sym * s_val + hyper.w_asym * a_val + hyper.w_vol * vol_val
    return value, total


# ---------------------------------------------------------------------------
# batched path used by the trainer


def batch_triple_terms(mu_c, o_c, mu_p, o_p, mu_n, o_n, hyper: LossHyper, neg_aggregate: str = "mean"):
    """Vectorized per-instance loss over a batch of instances.

    Shapes: child and parent arrays are (B, d); negatives are (B, N, d).
    Each instance contributes the aggregate (mean by default, or sum) of its
    N single-negative triple losses.

    Returns (components, grads, clamp_events) where components maps each loss
    term name to a (B,) array, grads is the tuple (d_mu_c, d_o_c, d_mu_p,
    d_o_p, d_mu_n, d_o_n) of gradients of the per-instance total, and
    clamp_events counts clamped logs across the whole batch.
    """
    if neg_aggregate not in ("mean", "sum"):
        raise ValueError(f"neg_aggregate must be 'mean' or 'sum', got {neg_aggregate!r}")
    mu_c, o_c, mu_p, o_p, mu_n, o_n = (
        np.asarray(a, dtype=np.float64) for a in (mu_c, o_c, mu_p, o_p, mu_n, o_n)
    )
    B, N, d = mu_n.shape
    v_c = np.maximum(o_c * o_c, geometry.VAR_FLOOR)
    v_p = np.maximum(o_p * o_p, geometry.VAR_FLOOR)
    v_n = np.maximum(o_n * o_n, geometry.VAR_FLOOR)
    mu_cx, v_cx = mu_c[:, None, :], v_c[:, None, :]

    # per-negative weight and positive-part multiplier under the aggregate
    w_neg = 1.0 / N if neg_aggregate == "mean" else 1.0
    w_pos = 1.0 if neg_aggregate == "mean" else float(N)

    # overlap term
    db_pos, p_mu_p, p_v_p, p_mu_c, p_v_c = _bhatta_parts(mu_p, v_p, mu_c, v_c)
    db_neg, n_mu_n, n_v_n, n_mu_c, n_v_c = _bhatta_parts(mu_n, v_n, mu_cx, v_cx)
    bc = np.exp(-db_neg)                    # (B, N)
    u = 1.0 - bc
    clamp = u < LOG_CLAMP
    clamp_events = int(np.count_nonzero(clamp))
    u = np.where(clamp, LOG_CLAMP, u)
    fac = np.where(clamp, 0.0, bc / u)      # (B, N)
    sym = w_pos * db_pos + w_neg * (-np.log(u)).sum(1)

    g_mu_c = w_pos * p_mu_c - w_neg * np.einsum("bn,bnd->bd", fac, n_mu_c)
    g_v_c = w_pos * p_v_c - w_neg * np.einsum("bn,bnd->bd", fac, n_v_c)
    g_mu_p = w_pos * p_mu_p
    g_v_p = w_pos * p_v_p
    g_mu_n = -w_neg * fac[:, :, None] * n_mu_n
    g_v_n = -w_neg * fac[:, :, None] * n_v_n

    sym_grads = (g_mu_c, g_v_c, g_mu_p, g_v_p, g_mu_n, g_v_n)

    # ranking hinge
    kl_p, a_mu_c, a_v_c, a_mu_p, a_v_p = _kl_parts(mu_c, v_c, mu_p, v_p)
    kl_n, b_mu_c, b_v_c, b_mu_n, b_v_n = _kl_parts(mu_cx, v_cx, mu_n, v_n)
    pre = kl_p[:, None] - kl_n + hyper.margin   # (B, N)
    act = (pre > 0.0).astype(np.float64)
    align = w_neg * (act * pre).sum(1)
    act_tot = act.sum(1)                        # (B,)

    g_mu_c = w_neg * (act_tot[:, None] * a_mu_c - np.einsum("bn,bnd->bd", act, b_mu_c))
    g_v_c = w_neg * (act_tot[:, None] * a_v_c - np.einsum("bn,bnd->bd", act, b_v_c))
    g_mu_p = w_neg * act_tot[:, None] * a_mu_p
    g_v_p = w_neg * act_tot[:, None] * a_v_p
    g_mu_n = -w_neg * act[:, :, None] * b_mu_n
    g_v_n = -w_neg * act[:, :, None] * b_v_n
    align_grads = (g_mu_c, g_v_c, g_mu_p, g_v_p, g_mu_n, g_v_n)

    # coverage hinge (independent of the negatives)
    kl_pc, c_mu_p, c_v_p, c_mu_c, c_v_c = _kl_parts(mu_p, v_p, mu_c, v_c)
    surplus = 0.5 * (np.log(v_p).sum(1) - np.log(v_c).sum(1))
    pre_d = hyper.coverage * surplus - kl_pc
    act_d = (pre_d > 0.0).astype(np.float64)
    diverge = w_pos * act_d * pre_d

    f = (w_pos * act_d)[:, None]
    div_grads = (
        -f * c_mu_c,
        f * (hyper.coverage * (-0.5 / v_c) - c_v_c),
        -f * c_mu_p,
        f * (hyper.coverage * (0.5 / v_p) - c_v_p),
        np.zeros_like(mu_n),
        np.zeros_like(v_n),
    )

    # volume regularizers on all three roles
    def _reg(v):
        gap = np.maximum(0.0, hyper.min_var - v)
        return (gap * gap).sum(-1) / d, -2.0 * gap / d

    def _clip(v):
        over = np.maximum(0.0, v - hyper.max_var)
        return over.sum(-1) / d, np.where(v > hyper.max_var, 1.0 / d, 0.0)

    reg_c, reg_c_g = _reg(v_c)
    reg_p, reg_p_g = _reg(v_p)
    reg_n, reg_n_g = _reg(v_n)
    clip_c, clip_c_g = _clip(v_c)
    clip_p, clip_p_g = _clip(v_p)
    clip_n, clip_n_g = _clip(v_n)

    reg = w_pos * (reg_c + reg_p) + w_neg * reg_n.sum(1)
    clip_val = w_pos * (clip_c + clip_p) + w_neg * clip_n.sum(1)
    vol_grads = (
        np.zeros_like(mu_c),
        w_pos * (reg_c_g + clip_c_g),
        np.zeros_like(mu_p),
        w_pos * (reg_p_g + clip_p_g),
        np.zeros_like(mu_n),
        w_neg * (reg_n_g + clip_n_g),
    )

    total = hyper.w_sym * sym + hyper.w_asym * (align + hyper.lam * diverge) + hyper.w_vol * (reg + clip_val)

    def _mix(i):
        return (
            hyper.w_sym * sym_grads[i]
            + hyper.w_asym * (align_grads[i] + hyper.lam * div_grads[i])
            + hyper.w_vol * vol_grads[i]
        )

    # convert variance partials to offset partials
    d_mu_c, d_v_c = _mix(0), _mix(1)
    d_mu_p, d_v_p = _mix(2), _mix(3)
    d_mu_n, d_v_n = _mix(4), _mix(5)
    grads = (
        d_mu_c, d_v_c * (2.0 * o_c),
        d_mu_p, d_v_p * (2.0 * o_p),
        d_mu_n, d_v_n * (2.0 * o_n),
    )
    components = {
        "sym": sym,
        "align": align,
        "diverge": diverge,
        "reg": reg,
        "clip": clip_val,
        "total": total,
    }
    return components, grads, clamp_events
