"""Objective functionals over dataset states.

A functional is a weighted sum of terms: distance to a target dataset,
potential energies integrated against the particle measure, pairwise
interaction energies, and an entropy term whose effect is realized as
Brownian noise by the dynamics engine. Every term exposes its value and
per-particle gradients; gradients follow the per-unit-mass convention of
FlowGradients so step sizes are comparable across particle counts.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError
from .otdd import (
    DatasetState,
    FlowGradients,
    ground_cost_matrix,
    _assemble_grads,
)
from .transport import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    default_reg,
    sinkhorn,
    sinkhorn_symmetric,
)

POTENTIAL_FORMS = (
    "quadratic",
    "linear",
    "affine_norm",
    "class_affine_norm",
    "hinge",
    "radial_shell",
)
INTERACTION_FORMS = ("class_repulsion", "cross_class_spread")


def _as_array(params, key, default=None, dim=None):
    if key in params:
        out = np.asarray(params[key], dtype=float)
    elif default is not None:
        out = default
    else:
        raise ValueError(f"potential params missing {key!r}")
    if dim is not None and out.shape[-1] != dim:
        raise ValueError(
            f"potential param {key!r} has dimension {out.shape[-1]}, expected {dim}"
        )
    return out


def _potential_pointwise(state: DatasetState, form: str, params: dict):
    """V(z_i) for every particle, plus the per-particle gradient dV/dx_i."""
    x = state.features
    y = state.labels
    n, d = x.shape

    if form == "quadratic":
        scale = float(params.get("scale", 1.0))
        center = _as_array(params, "center", np.zeros(d), dim=d)
        diff = x - center
        vals = 0.5 * scale * np.sum(diff**2, axis=1)
        grads = scale * diff
    elif form == "linear":
        w = _as_array(params, "normal", dim=d)
        c = float(params.get("offset", 0.0))
        vals = x @ w + c
        grads = np.broadcast_to(w, x.shape).copy()
    elif form == "affine_norm":
        a = np.atleast_2d(_as_array(params, "matrix", dim=d))
        b = _as_array(params, "offset", np.zeros(a.shape[0]))
        u = x @ a.T - b
        norms = np.linalg.norm(u, axis=1)
        vals = norms
        safe = np.where(norms > 0, norms, 1.0)
        grads = (u / safe[:, None]) @ a
        grads[norms == 0] = 0.0
    elif form == "class_affine_norm":
        per_class = params["per_class"]
        vals = np.zeros(n)
        grads = np.zeros_like(x)
        for c in np.unique(y):
            key = str(int(c)) if str(int(c)) in per_class else int(c)
            if key not in per_class:
                raise ValueError(f"class_affine_norm params missing class {c}")
            sub = per_class[key]
            a = np.atleast_2d(np.asarray(sub["matrix"], dtype=float))
            b = np.asarray(sub.get("offset", np.zeros(a.shape[0])), dtype=float)
            mask = y == c
            u = x[mask] @ a.T - b
            norms = np.linalg.norm(u, axis=1)
            vals[mask] = norms
            safe = np.where(norms > 0, norms, 1.0)
            g = (u / safe[:, None]) @ a
            g[norms == 0] = 0.0
            grads[mask] = g
    elif form == "hinge":
        # Printed form: V(z) = max{0, y (x.w - b)} with y in {-1, +1}; the
        # `negate` flag flips the sign convention without silently fixing it.
        w = _as_array(params, "normal", dim=d)
        b = float(params.get("bias", 0.0))
        positive = int(params.get("positive_label", 1))
        sign = np.where(y == positive, 1.0, -1.0)
        if params.get("negate", False):
            sign = -sign
        margin = sign * (x @ w - b)
        active = margin > 0
        vals = np.where(active, margin, 0.0)
        grads = np.where(active[:, None], sign[:, None] * w[None, :], 0.0)
    elif form == "radial_shell":
        center = _as_array(params, "center", np.zeros(d), dim=d)
        radius = float(params.get("radius", 1.0))
        diff = x - center
        norms = np.linalg.norm(diff, axis=1)
        active = norms > radius
        vals = np.where(active, norms - radius, 0.0)
        safe = np.where(norms > 0, norms, 1.0)
        grads = np.where(active[:, None], diff / safe[:, None], 0.0)
    else:
        raise ValueError(
            f"unknown potential form {form!r} (available: {', '.join(POTENTIAL_FORMS)})"
        )
    return vals, grads


def eval_potential(state: DatasetState, form: str, params: dict) -> float:
    """Empirical expectation of a pointwise potential: sum_i p_i V(z_i)."""
    vals, _ = _potential_pointwise(state, form, params)
    return float(state.weights @ vals)


def _interaction_pointwise(state: DatasetState, form: str):
    """Value and per-particle first-variation gradient of the pair energy."""
    x = state.features
    y = state.labels
    p = state.weights
    diff = x[:, None, :] - x[None, :, :]
    sq = np.sum(diff**2, axis=2)
    cross = (y[:, None] != y[None, :]).astype(float)
    if form == "class_repulsion":
        w = np.exp(-sq) * cross
        # grad of exp(-||u||^2) is -2 u exp(-||u||^2)
        gw = -2.0 * diff * (np.exp(-sq) * cross)[:, :, None]
    elif form == "cross_class_spread":
        w = -sq * cross
        gw = -2.0 * diff * cross[:, :, None]
    else:
        raise ValueError(
            f"unknown interaction form {form!r} (available: {', '.join(INTERACTION_FORMS)})"
        )
    value = 0.5 * float(p @ w @ p)
    # First variation of the symmetric double sum carries a factor 2 that
    # cancels the leading 1/2: grad_i = sum_j p_j dW(x_i - x_j).
    grads = np.einsum("j,ijd->id", p, gw)
    return value, grads


def eval_interaction(state: DatasetState, form: str, params: dict | None = None) -> float:
    """Pair energy 0.5 * sum_ij p_i p_j W(z_i - z_j); self-pairs included."""
    value, _ = _interaction_pointwise(state, form)
    return value


@dataclass
class PotentialTerm:
    form: str
    params: dict = field(default_factory=dict)
    weight: float = 1.0
    kind: str = field(default="potential", init=False)

    def value_and_grads(self, state: DatasetState, mode: str):
        vals, grads = _potential_pointwise(state, self.form, self.params)
        return float(state.weights @ vals), FlowGradients(grads)

    def value(self, state: DatasetState) -> float:
        return eval_potential(state, self.form, self.params)


@dataclass
class InteractionTerm:
    form: str
    params: dict = field(default_factory=dict)
    weight: float = 1.0
    kind: str = field(default="interaction", init=False)

    def value_and_grads(self, state: DatasetState, mode: str):
        value, grads = _interaction_pointwise(state, self.form)
        return value, FlowGradients(grads)

    def value(self, state: DatasetState) -> float:
        return eval_interaction(state, self.form, self.params)


@dataclass
class EntropyTerm:
    """Entropy of the underlying density, f(t) = t log t.

    No density estimate is attempted: the term reports value 0 and a zero
    deterministic gradient, and the dynamics engine realizes it as Brownian
    noise scaled by the term weight (Euler-Maruyama).
    """

    weight: float = 1.0
    kind: str = field(default="entropy", init=False)

    def value_and_grads(self, state: DatasetState, mode: str):
        return 0.0, FlowGradients(np.zeros_like(state.features))

    def value(self, state: DatasetState) -> float:
        return 0.0


class TargetDistanceTerm:
    """Entropic OT distance to a fixed target dataset.

    By default the term evaluates (and differentiates) the squared debiased
    divergence, which is smooth at its zero minimum; set ``squared=False``
    to flow the distance itself. The regularization, when not given, is
    frozen at the default fraction of the first evaluated mean ground cost
    so the objective stays a fixed functional along a flow. Dual potentials
    are warm-started between evaluations.

    """

    kind = "target_distance"

    def __init__(
        self,
        target: DatasetState,
        weight: float = 1.0,
        reg: float | None = None,
        debias: bool = True,
        squared: bool = True,
        max_iter: int = 3 * DEFAULT_MAX_ITER,
        tol: float = DEFAULT_TOL,
    ):
        self.target = target
        self.weight = weight
        self.reg = reg
        self.debias = debias
        self.squared = squared
        self.max_iter = max_iter
        self.tol = tol
        self._bb_soft = None
        self._warm_ab = None
        self._warm_aa = None

    def _solve(self, state: DatasetState):
        cost_ab = ground_cost_matrix(state, self.target)
        if self.reg is None:
            self.reg = default_reg(cost_ab)
        if self._warm_ab is not None and self._warm_ab[0].shape[0] != state.n:
            self._warm_ab = self._warm_aa = None
        plan_ab = sinkhorn(
            cost_ab, state.weights, self.target.weights, self.reg,
            self.max_iter, self.tol, init=self._warm_ab,
        )
        self._warm_ab = (plan_ab.dual_left, plan_ab.dual_right)
        plan_aa = None
        if self.debias:
            cost_aa = ground_cost_matrix(state, state)
            plan_aa = sinkhorn_symmetric(
                cost_aa, state.weights, self.reg,
                self.max_iter, self.tol, init=self._warm_aa,
            )
            self._warm_aa = plan_aa.dual_left
            if self._bb_soft is None:
                cost_bb = ground_cost_matrix(self.target, self.target)
                self._bb_soft = sinkhorn_symmetric(
                    cost_bb, self.target.weights, self.reg, self.max_iter, self.tol
                ).soft_cost
            value_sq = plan_ab.soft_cost - 0.5 * (plan_aa.soft_cost + self._bb_soft)
        else:
            value_sq = plan_ab.soft_cost
        return value_sq, plan_ab, plan_aa

    def value_and_grads(self, state: DatasetState, mode: str):
        value_sq, plan_ab, plan_aa = self._solve(state)
        grads = _assemble_grads(state, self.target, plan_ab, plan_aa, mode)
        if self.squared:
            return value_sq, grads
        value = float(np.sqrt(max(value_sq, 0.0)))
        # Subgradient 0 at the (nonsmooth) zero of the square root.
        grads.scale(0.5 / value if value > 1e-9 else 0.0)
        return value, grads

    def value(self, state: DatasetState) -> float:
        value_sq, _, _ = self._solve(state)
        if self.squared:
            return value_sq
        return float(np.sqrt(max(value_sq, 0.0)))


@dataclass
class FunctionalSpec:
    """Weighted sum of functional terms driving a flow."""

    terms: list

    def __post_init__(self):
        if not self.terms:
            raise ValueError("functional needs at least one term")
        for t in self.terms:
            if not np.isfinite(t.weight):
                raise ValueError("term weights must be finite")

    def entropy_weight(self) -> float:
        return sum(t.weight for t in self.terms if t.kind == "entropy")

    def has_target(self) -> bool:
        return any(t.kind == "target_distance" for t in self.terms)

    def term_kinds(self):
        return [t.kind for t in self.terms]


def grad_functional(state: DatasetState, spec: FunctionalSpec, mode: str):
    """Weighted value and gradients of the functional at a state.

    Zero-weight terms are skipped entirely (no transport solves). Returns
    (value, FlowGradients); the entropy term contributes nothing here.
    """
    if state.dim == 0:
        raise DimensionMismatchError("state has no features")
    total = 0.0
    grads = FlowGradients.zeros(state, mode)
    for term in spec.terms:
        if term.weight == 0.0:
            continue
        v, g = term.value_and_grads(state, mode)
        total += term.weight * v
        grads.axpy(term.weight, g)
    return total, grads


def eval_terms(state: DatasetState, spec: FunctionalSpec):
    """Weighted per-term values, in spec order (entropy reports 0)."""
    return [
        0.0 if t.weight == 0.0 else t.weight * t.value(state)
        for t in spec.terms
    ]
