"""First-order step rules applied to flow gradients.

Supports plain sgd, sgd with momentum, adam, and adagrad, with independent
accumulator buffers per gradient block (features / means / covariances) and
optional per-block step sizes. Covariance blocks are projected back onto the
PSD cone after every update.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FlowDivergenceError
from .gaussian import LabelDistribution, project_psd, psd_floor_value
from .otdd import DatasetState, FlowGradients

RULES = ("sgd", "momentum", "adam", "adagrad")


@dataclass
class OptimizerState:
    """Step rule, hyperparameters, and per-block accumulators.

    A single instance drives all blocks of a flow; ``block_step_sizes`` can
    override the shared step size per block family ("features", "means",
    "covs"), which the paper's single-tau scheme leaves shared by default.
    """

    rule: str = "sgd"
    step_size: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    adagrad_eps: float = 1e-10
    block_step_sizes: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown optimizer rule {self.rule!r}")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")

    def clone(self) -> "OptimizerState":
        return OptimizerState(
            rule=self.rule,
            step_size=self.step_size,
            momentum=self.momentum,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            adagrad_eps=self.adagrad_eps,
            block_step_sizes=dict(self.block_step_sizes),
        )

    def tau(self, block: str) -> float:
        return float(self.block_step_sizes.get(block, self.step_size))

    def delta(self, block: str, grad: np.ndarray) -> np.ndarray:
        """Update to subtract from the block's parameters for this gradient.

        Bias correction for adam uses the post-increment step count, so call
        only after ``step_count`` has been advanced for the current step.
        """
        tau = self.tau(block)
        if self.rule == "sgd":
            return tau * grad
        buf = self.buffers.setdefault(block, {})
        if self.rule == "momentum":
            v = buf.get("v")
            v = grad.copy() if v is None else self.momentum * v + grad
            buf["v"] = v
            return tau * v
        if self.rule == "adagrad":
            g2 = buf.get("g2")
            g2 = grad**2 if g2 is None else g2 + grad**2
            buf["g2"] = g2
            return tau * grad / (np.sqrt(g2) + self.adagrad_eps)
        # adam
        t = self.step_count
        m = buf.get("m")
        v = buf.get("v")
        m = (1 - self.beta1) * grad if m is None else self.beta1 * m + (1 - self.beta1) * grad
        v = (1 - self.beta2) * grad**2 if v is None else self.beta2 * v + (1 - self.beta2) * grad**2
        buf["m"] = m
        buf["v"] = v
        m_hat = m / (1 - self.beta1**t)
        v_hat = v / (1 - self.beta2**t)
        return tau * m_hat / (np.sqrt(v_hat) + self.adam_eps)


def apply_step(state: DatasetState, grads: FlowGradients, opt: OptimizerState):
    """One explicit Euler step of every block present in the gradients.

    Features always move; mean/covariance blocks move when the gradients
    carry them, and updated covariances are re-projected onto the PSD cone.
    Returns (new_state, opt); the optimizer is advanced in place.

    Raises FlowDivergenceError (with the step index) on non-finite gradients.
    """
    if not grads.is_finite():
        raise FlowDivergenceError(opt.step_count, "non-finite gradient")
    opt.step_count += 1

    new = state.copy()
    new.features = state.features - opt.delta("features", grads.d_features)

    if grads.d_means is not None:
        if isinstance(grads.d_means, dict):
            keys = sorted(grads.d_means)
            g_mean = np.stack([grads.d_means[c] for c in keys])
            g_cov = np.stack([grads.d_covs[c] for c in keys])
            means = np.stack([state.label_dists[c].mean for c in keys])
            covs = np.stack([state.label_dists[c].cov for c in keys])
        else:
            keys = None
            g_mean = grads.d_means
            g_cov = grads.d_covs
            means = np.stack([d.mean for d in state.label_dists])
            covs = np.stack([d.cov for d in state.label_dists])

        means = means - opt.delta("means", g_mean)
        covs = covs - opt.delta("covs", g_cov)
        updated = [
            LabelDistribution(means[k], project_psd(covs[k], psd_floor_value(covs[k])))
            for k in range(means.shape[0])
        ]
        if keys is None:
            new.label_dists = updated
        else:
            new.label_dists = dict(zip(keys, updated))
    return new, opt
