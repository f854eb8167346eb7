"""Independent finite-difference oracle for every analytic gradient.

Checks run under the 64-bit engine mode with the dropout mask frozen (the
loss must be a deterministic function of the parameters).  Full kernels
are large, so each parameter tensor is probed at a seeded subsample of at
most ``max_elements`` positions; that is plenty to catch a broken
backward, whose error shows up as ~2.0 relative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers, network, tensor
from .errors import DivergenceError

REL_FLOOR = 1e-8

# Central differences on an O(1) loss cannot resolve gradients much below
# ulp(loss) / (2 * eps); both sides sitting under this floor counts as
# agreement on zero rather than a comparison of roundoff noise.
AGREEMENT_FLOOR = 1e-6

REDUCED_INPUT_HW = {"shallow": 8, "deep": 12}


@dataclass
class GradCheckResult:
    network_id: str
    seed: int
    tolerance: float
    per_param: dict          # name -> max relative error over probed elements
    global_max: float
    passed: bool

    def to_text(self) -> str:
        lines = [f"network: {self.network_id}  seed: {self.seed}  tolerance: {self.tolerance:g}"]
        width = max(len(name) for name in self.per_param)
        for name in sorted(self.per_param):
            lines.append(f"  {name:<{width}}  max_rel_err = {self.per_param[name]:.3e}")
        lines.append(f"  global max = {self.global_max:.3e}  ->  "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def finite_diff(loss_fn, param: np.ndarray, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of a scalar loss w.r.t. selected tensor elements.

    ``indices`` are flat positions (default: every element).  Unprobed
    positions stay zero in the returned tensor.
    """
    if eps <= 0:
        raise DivergenceError(f"eps must be positive, got {eps}")
    grad = np.zeros_like(param, dtype=np.float64)
    flat_indices = range(param.size) if indices is None else indices
    for i in flat_indices:
        w = param.copy()
        w.flat[i] += eps
        up = loss_fn(w)
        w.flat[i] -= 2 * eps
        down = loss_fn(w)
        if not (math.isfinite(up) and math.isfinite(down)):
            raise DivergenceError(f"non-finite loss while perturbing element {i}")
        grad.flat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def probe_error(analytic: float, numeric: float) -> float:
    """Relative error of one probe, zero when both sides are below FD resolution."""
    if max(abs(analytic), abs(numeric)) < AGREEMENT_FLOOR:
        return 0.0
    return relative_error(analytic, numeric)


def check_network(spec: network.NetworkSpec, seed: int, tolerance: float = 1e-4,
                  n_samples: int = 2, max_elements: int = 64, eps: float = 1e-5,
                  init_std: float = 0.05) -> GradCheckResult:
    """Compare every analytic parameter gradient against finite differences.

    Builds a fresh model, a tiny synthetic batch matching the network's
    input size, and a deterministic loss (dropout re-seeded per evaluation
    so the mask never moves).  ``init_std`` is deliberately larger than the
    training default: gradients are scale-independent to verify, and the
    bigger scale keeps pre-activations far from the ReLU/maxpool kinks
    relative to ``eps``.  Elements that still exceed the tolerance are
    re-probed at a smaller step; a kink artifact shrinks with the step, a
    genuine backward defect does not.
    """
    with tensor.precision("float64"):
        state = network.init_params(spec, seed, init_std=init_std)
        rng = np.random.default_rng([int(seed), 5])
        hw = spec.input_hw
        x = rng.random((n_samples, hw, hw, network.INPUT_CHANNELS))
        y = np.zeros((n_samples, network.N_CLASSES))
        y[np.arange(n_samples), np.arange(n_samples) % network.N_CLASSES] = 1.0

        def run_loss() -> float:
            frozen = np.random.default_rng([int(seed), 7])
            logits, _ = network.forward_logits(state, x, training=True, rng=frozen)
            _, loss = layers.softmax_cross_entropy(logits, y)
            return loss

        frozen = np.random.default_rng([int(seed), 7])
        logits, caches = network.forward_logits(state, x, training=True, rng=frozen)
        probs, _ = layers.softmax_cross_entropy(logits, y)
        analytic = network.backward(state, caches, layers.softmax_cross_entropy_backward(probs, y))

        picker = np.random.default_rng([int(seed), 6])
        per_param = {}
        for name in sorted(state.params):
            param = state.params[name]
            n_probe = min(max_elements, param.size)
            indices = np.sort(picker.choice(param.size, size=n_probe, replace=False))

            def loss_at(w, _name=name):
                original = state.params[_name]
                state.params[_name] = w
                try:
                    return run_loss()
                finally:
                    state.params[_name] = original

            numeric = finite_diff(loss_at, param, eps=eps, indices=indices)
            worst = 0.0
            for i in indices:
                err = probe_error(analytic[name].flat[i], numeric.flat[i])
                if err >= tolerance:
                    retry = finite_diff(loss_at, param, eps=eps / 8.0, indices=[i])
                    err = min(err, probe_error(analytic[name].flat[i], retry.flat[i]))
                worst = max(worst, err)
            per_param[name] = worst
    global_max = max(per_param.values())
    return GradCheckResult(
        network_id=spec.id,
        seed=seed,
        tolerance=tolerance,
        per_param=per_param,
        global_max=global_max,
        passed=global_max < tolerance,
    )
