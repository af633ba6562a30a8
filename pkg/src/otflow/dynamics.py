"""The flow engine: explicit Euler / Euler-Maruyama advancement of a
dataset state under a functional, in one of three dynamics modes.

fd     gradient steps on features only; class moments refreshed from the
       particles after every step.
jd-fl  gradient steps on features and on the per-class (mean, cov) blocks,
       with label assignments fixed for the whole flow.
jd-vl  per-particle (mean, cov) blocks evolve independently; labels are
       re-imputed by clustering the moment pairs at a configurable cadence
       and once at the end.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import DEFAULT_EPS, DEFAULT_MIN_PTS, dbscan_bures, kmeans_embedded
from .errors import DimensionMismatchError, FlowDivergenceError, NumericError
from .functionals import FunctionalSpec, eval_terms, grad_functional
from .optim import OptimizerState, apply_step
from .otdd import MODE_FD, MODE_JD_FL, MODE_JD_VL, MODES, DatasetState, label_stats


@dataclass
class FlowConfig:
    """Everything needed to reproduce a flow run."""

    functional: FunctionalSpec
    optimizer: OptimizerState
    mode: str = MODE_FD
    steps: int = 100
    noise_scale: float = 0.0
    noise_schedule: str = "sqrt-decay"   # or "constant"
    noise_target: str = "eval-point"     # or "state"
    relabel_every: int = 10
    relabel_method: str = "dbscan"       # or "kmeans"
    cluster_eps: float = DEFAULT_EPS
    cluster_min_pts: int = DEFAULT_MIN_PTS
    cluster_k: int | None = None
    seed: int = 0
    record_every: int = 10

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.noise_schedule not in ("sqrt-decay", "constant"):
            raise ValueError(f"unknown noise_schedule {self.noise_schedule!r}")
        if self.noise_target not in ("eval-point", "state"):
            raise ValueError(f"unknown noise_target {self.noise_target!r}")
        if self.relabel_method not in ("dbscan", "kmeans"):
            raise ValueError(f"unknown relabel_method {self.relabel_method!r}")
        if self.relabel_method == "kmeans" and self.cluster_k is None:
            raise ValueError("kmeans relabeling needs cluster_k")

    def beta(self, step: int) -> float:
        if self.noise_scale == 0.0:
            return 0.0
        if self.noise_schedule == "constant":
            return self.noise_scale
        return self.noise_scale / np.sqrt(step + 1.0)


@dataclass
class Snapshot:
    step: int
    state: DatasetState
    objective: float
    term_values: list
    wall_time: float


@dataclass
class Trajectory:
    """Recorded flow: snapshots at the configured cadence (always including
    the initial and final states) plus the per-step objective trace."""

    snapshots: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    term_kinds: list = field(default_factory=list)
    mode: str = MODE_FD
    seed: int = 0

    @property
    def initial(self) -> Snapshot:
        return self.snapshots[0]

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def _check_mode_shape(state: DatasetState, mode: str):
    if mode == MODE_JD_VL and not state.per_particle:
        raise DimensionMismatchError("jd-vl flow needs per-particle label_dists")
    if mode in (MODE_FD, MODE_JD_FL) and state.per_particle:
        raise DimensionMismatchError(f"{mode} flow needs per-class label_dists")


def _state_is_finite(state: DatasetState) -> bool:
    if not np.all(np.isfinite(state.features)):
        return False
    dists = state.label_dists if state.per_particle else state.label_dists.values()
    return all(
        np.all(np.isfinite(d.mean)) and np.all(np.isfinite(d.cov)) for d in dists
    )


def relabel(state: DatasetState, config: FlowConfig, rng) -> int:
    """Re-impute labels by clustering the per-particle moment pairs.

    Replaces particle labels with cluster ids; DBSCAN noise points keep
    their previous label so no particle (mass) is ever dropped. The
    per-particle distributions are untouched: labels are a view for
    evaluation and export, the distributions carry the dynamics.
    Returns the number of clusters found.
    """
    if config.relabel_method == "kmeans":
        seed = int(rng.integers(2**31 - 1))
        assignment = kmeans_embedded(state.label_dists, config.cluster_k, seed=seed)
    else:
        assignment = dbscan_bures(state.label_dists, config.cluster_eps, config.cluster_min_pts)
    new_labels = assignment.labels.copy()
    noise = new_labels < 0
    new_labels[noise] = state.labels[noise]
    state.labels = new_labels
    return assignment.k


def flow_step(state: DatasetState, config: FlowConfig, opt: OptimizerState, rng, step: int = 0):
    """Advance the state by one step. Returns (new_state, diagnostics).

    With ``noise_scale > 0`` the gradient is evaluated at a Gaussian
    perturbation of the features (Euler-Maruyama style); ``noise_target``
    selects whether the perturbation only shifts the evaluation point or is
    written into the state itself. An entropy term in the functional adds
    scaled Brownian noise through the gradient, exact Euler-Maruyama under
    the sgd rule.
    """
    _check_mode_shape(state, config.mode)
    beta = config.beta(step)

    eval_state = state
    if beta > 0.0:
        noise = rng.standard_normal(state.features.shape)
        if config.noise_target == "state":
            state = state.copy()
            state.features = state.features + beta * noise
            eval_state = state
        else:
            eval_state = state.copy()
            eval_state.features = state.features + beta * noise

    value, grads = grad_functional(eval_state, config.functional, config.mode)

    w_entropy = config.functional.entropy_weight()
    if w_entropy > 0.0:
        tau = opt.tau("features")
        grads.d_features = grads.d_features - np.sqrt(2.0 * w_entropy / tau) * rng.standard_normal(
            state.features.shape
        )

    try:
        new_state, opt = apply_step(state, grads, opt)
    except FlowDivergenceError as exc:
        raise FlowDivergenceError(step, "non-finite gradient") from exc
    except NumericError as exc:
        raise FlowDivergenceError(step, str(exc)) from exc

    if not np.all(np.isfinite(new_state.features)):
        raise FlowDivergenceError(step, "non-finite state")

    if config.mode == MODE_FD:
        new_state.label_dists = label_stats(new_state, classes=sorted(new_state.label_dists))

    diagnostics = {"objective": value, "beta": beta, "step": step}

    if config.mode == MODE_JD_VL and config.relabel_every > 0 and (step + 1) % config.relabel_every == 0:
        diagnostics["clusters"] = relabel(new_state, config, rng)

    if not _state_is_finite(new_state):
        raise FlowDivergenceError(step, "non-finite state")
    return new_state, diagnostics


def run_flow(initial: DatasetState, config: FlowConfig) -> Trajectory:
    """Run the configured number of steps from an initial state.

    Deterministic for a fixed config and seed. Snapshots deep-copy the
    state, so recorded trajectories are immutable afterwards. On divergence
    the partial trajectory is attached to the raised error.
    """
    config.validate()
    state = initial.copy()
    if config.mode == MODE_JD_VL and not state.per_particle:
        state = state.decoupled()
    _check_mode_shape(state, config.mode)
    state.validate()

    opt = config.optimizer.clone()
    rng = np.random.default_rng(config.seed)
    traj = Trajectory(
        term_kinds=config.functional.term_kinds(), mode=config.mode, seed=config.seed
    )
    t_start = time.perf_counter()

    def record(step, current):
        terms = eval_terms(current, config.functional)
        traj.snapshots.append(
            Snapshot(step, current.copy(), float(sum(terms)), terms,
                     time.perf_counter() - t_start)
        )

    try:
        for t in range(config.steps):
            if t % config.record_every == 0:
                record(t, state)
            state, diag = flow_step(state, config, opt, rng, t)
            traj.objective_trace.append(float(diag["objective"]))
    except FlowDivergenceError as exc:
        exc.trajectory = traj
        raise

    if config.mode == MODE_JD_VL:
        relabel(state, config, rng)
    record(config.steps, state)
    traj.objective_trace.append(traj.snapshots[-1].objective)
    return traj
