"""Least-squares fitting of mixing measures.

The objective is the plain sum of squared residuals between observed
responses and the gated-mixture regression function. Gradients are
analytic; the optimizer is full-batch Adam with projection of every
parameter onto the box [-box_bound, box_bound] after each step and a
plateau-triggered halving of the learning rate so the stopping rules can
actually fire. Initialization is either multistart (seeded random draws)
or a perturbation of a reference measure; the latter is the default for
rate experiments because the theory speaks about the global least-squares
minimizer, which restart heuristics cannot certify.

Flat parameter layout (``pack_parameters``): atoms in order, each as
(log-weight, then prompt coordinates - key prompt then value prompt for
untied atoms); for the latent variant the two shared weight matrices
follow, row-major, w1 before w2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, UsageError
from .model import (
    ACTIVATIONS,
    Dataset,
    LinearSharedMeasure,
    MEASURE_VARIANTS,
    NeuralSharedMeasure,
    NonSharedMeasure,
    PretrainedBank,
    ProjectionPair,
    _predict,
    measure_to_dict,
)

__all__ = [
    "OptimizerConfig",
    "InitSpec",
    "FitConfig",
    "FitResult",
    "ESTIMATOR_NOTE",
    "pack_parameters",
    "unpack_parameters",
    "objective",
    "gradient",
    "finite_difference_gradient",
    "gradient_check",
    "fit",
]


ESTIMATOR_NOTE = (
    "Rate experiments initialize at a perturbation of the generating measure: "
    "the theory concerns the global least-squares minimizer, which multistart "
    "heuristics cannot certify. Multistart fits remain available for honesty runs."
)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class OptimizerConfig:
    """Full-batch Adam settings with projection and plateau decay.

    Stopping: relative objective change below ``obj_tol`` (held for
    ``obj_tol_hits`` consecutive iterations, which guards against the
    oscillation turning points of adaptive steps), gradient norm below
    ``grad_tol``, or ``max_iters``.
    """

    learning_rate: float = 0.05
    max_iters: int = 20000
    grad_tol: float = 1e-8
    obj_tol: float = 1e-10
    obj_tol_hits: int = 10
    patience: int = 30
    progress_rtol: float = 1e-7
    lr_decay: float = 0.5
    min_learning_rate: float = 1e-12
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 < self.lr_decay < 1:
            raise ConfigurationError("lr_decay must lie in (0, 1)")


@dataclass(frozen=True)
class InitSpec:
    """How to initialize the optimizer.

    ``multistart``: ``restarts`` independent seeded random draws.
    ``oracle_perturb``: one start at ``reference`` (cycled over the atom
    budget with weights split among copies) plus Gaussian noise of scale
    ``scale`` on every coordinate.
    """

    kind: str
    restarts: int = 16
    scale: float = 0.1
    reference: object = None

    def __post_init__(self):
        if self.kind not in ("multistart", "oracle_perturb"):
            raise ConfigurationError(f"unknown init kind {self.kind!r}")
        if self.kind == "multistart" and self.restarts < 1:
            raise ConfigurationError("multistart needs at least one restart")
        if self.scale < 0:
            raise ConfigurationError("perturbation scale must be nonnegative")

    @classmethod
    def multistart(cls, restarts: int = 16) -> "InitSpec":
        return cls("multistart", restarts=restarts)

    @classmethod
    def oracle_perturb(cls, scale: float = 0.1, reference=None) -> "InitSpec":
        return cls("oracle_perturb", scale=scale, reference=reference)


@dataclass(frozen=True)
class FitConfig:
    """Everything a fit needs besides the data and the frozen components."""

    setting: str
    atom_budget: int
    init: InitSpec
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    box_bound: float = 5.0
    seed: int = 0
    latent_dim: Optional[int] = None
    activations: tuple = ("tanh", "tanh")

    def __post_init__(self):
        if self.setting not in MEASURE_VARIANTS:
            raise ConfigurationError(f"unknown setting {self.setting!r}")
        if self.atom_budget < 1:
            raise ConfigurationError("atom budget must be at least 1")
        if self.box_bound <= 0:
            raise ConfigurationError("box_bound must be positive")


@dataclass(frozen=True)
class FitResult:
    """Best-of-restarts estimate with diagnostics.

    ``failed`` is set when every restart aborted on a non-finite
    objective; the measure is then the last attempted initialization.
    """

    measure: object
    final_objective: float
    iterations: int
    converged: bool
    restarts_used: int
    gradient_norm: float
    warnings: tuple = ()
    failed: bool = False
    failure_reason: str = ""
    restart_objectives: tuple = ()

    def to_dict(self) -> dict:
        return {
            "measure": measure_to_dict(self.measure),
            "final_objective": float(self.final_objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "restarts_used": int(self.restarts_used),
            "gradient_norm": float(self.gradient_norm),
            "warnings": list(self.warnings),
            "failed": bool(self.failed),
            "failure_reason": self.failure_reason,
            "restart_objectives": [
                None if not math.isfinite(v) else float(v) for v in self.restart_objectives
            ],
        }


# --------------------------------------------------------------------------
# parameter packing


def pack_parameters(measure) -> np.ndarray:
    """Flatten the free parameters of a measure; see module docstring."""
    if isinstance(measure, NonSharedMeasure):
        return np.column_stack([measure.log_weights, measure.p_key, measure.p_value]).ravel()
    if isinstance(measure, LinearSharedMeasure):
        return np.column_stack([measure.log_weights, measure.prompts]).ravel()
    if isinstance(measure, NeuralSharedMeasure):
        atoms = np.column_stack([measure.log_weights, measure.prompts]).ravel()
        return np.concatenate([atoms, measure.w1.ravel(), measure.w2.ravel()])
    raise UsageError(f"cannot pack {type(measure).__name__}")


def unpack_parameters(theta: np.ndarray, template):
    """Rebuild a measure of the template's variant and shapes from a flat vector."""
    theta = np.asarray(theta, dtype=float)
    n = template.n_atoms
    if isinstance(template, NonSharedMeasure):
        d = template.dim
        atoms = theta.reshape(n, 1 + 2 * d)
        return NonSharedMeasure(atoms[:, 0], atoms[:, 1 : 1 + d], atoms[:, 1 + d :])
    if isinstance(template, LinearSharedMeasure):
        d = template.dim
        atoms = theta.reshape(n, 1 + d)
        return LinearSharedMeasure(atoms[:, 0], atoms[:, 1:])
    if isinstance(template, NeuralSharedMeasure):
        d, ld = template.dim, template.latent_dim
        n_atom_params = n * (1 + ld)
        atoms = theta[:n_atom_params].reshape(n, 1 + ld)
        w1 = theta[n_atom_params : n_atom_params + d * ld].reshape(d, ld)
        w2 = theta[n_atom_params + d * ld :].reshape(d, ld)
        return NeuralSharedMeasure(w1, w2, atoms[:, 0], atoms[:, 1:], template.act1, template.act2)
    raise UsageError(f"cannot unpack {type(template).__name__}")


# --------------------------------------------------------------------------
# objective and gradient


def objective(measure, bank: PretrainedBank, proj: ProjectionPair, dataset: Dataset) -> float:
    """Sum of squared residuals of the measure's regression function."""
    residual = dataset.y - _predict(bank, proj, measure, dataset.x)
    return float(residual @ residual)


class _Problem:
    """Dataset-dependent quantities precomputed once per fit, plus the
    value/gradient of the objective in the flat parameter layout."""

    def __init__(self, template, bank: PretrainedBank, proj: ProjectionPair, dataset: Dataset):
        self.template = template
        self.x = dataset.x
        self.y = dataset.y
        self.pre_logits = bank.gate_logits(self.x)
        self.pre_values = bank.expert_values(self.x)
        self.xb = self.x @ proj.b  # row i holds (b^T x_i)^T
        self.c = proj.c

    def value_and_grad(self, theta: np.ndarray):
        t = self.template
        n_bank = self.pre_logits.shape[1]
        n = t.n_atoms
        if isinstance(t, NeuralSharedMeasure):
            d, ld = t.dim, t.latent_dim
            n_atom_params = n * (1 + ld)
            atoms = theta[:n_atom_params].reshape(n, 1 + ld)
            b, p = atoms[:, 0], atoms[:, 1:]
            w1 = theta[n_atom_params : n_atom_params + d * ld].reshape(d, ld)
            w2 = theta[n_atom_params + d * ld :].reshape(d, ld)
            act1, act2 = ACTIVATIONS[t.act1], ACTIVATIONS[t.act2]
            z1 = p @ w1.T
            z2 = p @ w2.T
            kappa = act1.fn(z1)
            cvals = act2.fn(z2) @ self.c
        elif isinstance(t, NonSharedMeasure):
            d = t.dim
            atoms = theta.reshape(n, 1 + 2 * d)
            b = atoms[:, 0]
            kappa = atoms[:, 1 : 1 + d]
            cvals = atoms[:, 1 + d :] @ self.c
        else:
            d = t.dim
            atoms = theta.reshape(n, 1 + d)
            b = atoms[:, 0]
            kappa = atoms[:, 1:]
            cvals = kappa @ self.c

        logits = np.hstack([self.pre_logits, self.xb @ kappa.T + b])
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        denom = e.sum(axis=1)
        gates_prefix = e[:, n_bank:] / denom[:, None]
        f = (e[:, :n_bank] * self.pre_values).sum(axis=1) / denom + gates_prefix @ cvals
        residual = self.y - f
        value = float(residual @ residual)

        dldf = -2.0 * residual
        base = dldf[:, None] * gates_prefix * (cvals[None, :] - f[:, None])
        grad_b = base.sum(axis=0)
        scalar_value_path = (dldf[:, None] * gates_prefix).sum(axis=0)

        if isinstance(t, NonSharedMeasure):
            grad_key = base.T @ self.xb
            grad_value = np.outer(scalar_value_path, self.c)
            grad = np.column_stack([grad_b, grad_key, grad_value]).ravel()
        elif isinstance(t, LinearSharedMeasure):
            grad_p = base.T @ self.xb + np.outer(scalar_value_path, self.c)
            grad = np.column_stack([grad_b, grad_p]).ravel()
        else:
            s1 = act1.deriv(z1)
            s2 = act2.deriv(z2)
            key_path = (base.T @ self.xb) * s1  # (n_atoms, d)
            value_path = scalar_value_path[:, None] * (self.c[None, :] * s2)
            grad_p = key_path @ w1 + value_path @ w2
            grad_w1 = key_path.T @ p
            grad_w2 = value_path.T @ p
            grad = np.concatenate(
                [np.column_stack([grad_b, grad_p]).ravel(), grad_w1.ravel(), grad_w2.ravel()]
            )
        return value, grad


def gradient(measure, bank: PretrainedBank, proj: ProjectionPair, dataset: Dataset) -> np.ndarray:
    """Analytic gradient of ``objective`` in the flat parameter layout."""
    problem = _Problem(measure, bank, proj, dataset)
    return problem.value_and_grad(pack_parameters(measure))[1]


def finite_difference_gradient(
    measure, bank: PretrainedBank, proj: ProjectionPair, dataset: Dataset, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``objective``, coordinate by coordinate."""
    theta = pack_parameters(measure)
    out = np.empty_like(theta)
    for i in range(theta.size):
        plus = theta.copy()
        minus = theta.copy()
        plus[i] += step
        minus[i] -= step
        f_plus = objective(unpack_parameters(plus, measure), bank, proj, dataset)
        f_minus = objective(unpack_parameters(minus, measure), bank, proj, dataset)
        out[i] = (f_plus - f_minus) / (2.0 * step)
    return out


def gradient_check(
    measure, bank: PretrainedBank, proj: ProjectionPair, dataset: Dataset, step: float = 1e-5
) -> float:
    """Worst per-coordinate relative error between analytic and
    central-difference gradients, with denominator max(1, |a|, |fd|)."""
    analytic = gradient(measure, bank, proj, dataset)
    numeric = finite_difference_gradient(measure, bank, proj, dataset, step)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / scale))


# --------------------------------------------------------------------------
# initialization


def _split_counts(budget: int, n_ref: int) -> np.ndarray:
    idx = np.arange(budget) % n_ref
    counts = np.bincount(idx, minlength=n_ref)
    return idx, counts


def _perturbed_init(reference, budget: int, scale: float, rng):
    idx, counts = _split_counts(budget, reference.n_atoms)
    log_w = reference.log_weights[idx] - np.log(counts[idx]) + scale * rng.standard_normal(budget)
    if isinstance(reference, NonSharedMeasure):
        pk = reference.p_key[idx] + scale * rng.standard_normal((budget, reference.dim))
        pv = reference.p_value[idx] + scale * rng.standard_normal((budget, reference.dim))
        return NonSharedMeasure(log_w, pk, pv)
    if isinstance(reference, LinearSharedMeasure):
        p = reference.prompts[idx] + scale * rng.standard_normal((budget, reference.dim))
        return LinearSharedMeasure(log_w, p)
    p = reference.prompts[idx] + scale * rng.standard_normal((budget, reference.latent_dim))
    w1 = reference.w1 + scale * rng.standard_normal(reference.w1.shape)
    w2 = reference.w2 + scale * rng.standard_normal(reference.w2.shape)
    return NeuralSharedMeasure(w1, w2, log_w, p, reference.act1, reference.act2)


def _random_init(config: FitConfig, dim: int, rng):
    budget = config.atom_budget
    log_w = rng.uniform(-1.0, 1.0, size=budget)
    if config.setting == "non_shared":
        return NonSharedMeasure(
            log_w,
            rng.uniform(-2.0, 2.0, size=(budget, dim)),
            rng.uniform(-2.0, 2.0, size=(budget, dim)),
        )
    if config.setting == "linear_shared":
        return LinearSharedMeasure(log_w, rng.uniform(-2.0, 2.0, size=(budget, dim)))
    if config.latent_dim is None:
        raise ConfigurationError("multistart for the latent variant needs latent_dim")
    ld = config.latent_dim
    return NeuralSharedMeasure(
        rng.standard_normal((dim, ld)) / math.sqrt(ld),
        rng.standard_normal((dim, ld)) / math.sqrt(ld),
        log_w,
        rng.uniform(-2.0, 2.0, size=(budget, ld)),
        config.activations[0],
        config.activations[1],
    )


def _build_inits(config: FitConfig, dim: int, rng):
    warnings_out = []
    if config.init.kind == "oracle_perturb":
        reference = config.init.reference
        if reference is None:
            raise ConfigurationError("oracle_perturb initialization needs a reference measure")
        if reference.variant != config.setting:
            raise ConfigurationError(
                f"reference variant {reference.variant!r} != setting {config.setting!r}"
            )
        if config.atom_budget < reference.n_atoms:
            warnings_out.append(
                f"atom budget {config.atom_budget} is below the reference atom count "
                f"{reference.n_atoms}; the overspecified protocol expects at least as many"
            )
        inits = [_perturbed_init(reference, config.atom_budget, config.init.scale, rng)]
    else:
        inits = [_random_init(config, dim, rng) for _ in range(config.init.restarts)]
    return inits, warnings_out


# --------------------------------------------------------------------------
# optimizer


def _minimize(problem: _Problem, theta0: np.ndarray, opt: OptimizerConfig, box_bound: float):
    theta = np.clip(theta0, -box_bound, box_bound)
    value, grad = problem.value_and_grad(theta)
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        return None
    grad_norm = float(np.linalg.norm(grad))
    best_theta, best_value, best_grad_norm = theta.copy(), value, grad_norm
    if grad_norm < opt.grad_tol:
        return best_theta, best_value, 0, True, best_grad_norm

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    lr = opt.learning_rate
    progress_ref = value  # objective at the last significant improvement
    stall = 0
    hits = 0
    stage_step = 0  # bias-correction counter, reset with the moments
    converged = False
    iterations = 0
    for t in range(1, opt.max_iters + 1):
        iterations = t
        stage_step += 1
        m = opt.beta1 * m + (1.0 - opt.beta1) * grad
        v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad
        m_hat = m / (1.0 - opt.beta1**stage_step)
        v_hat = v / (1.0 - opt.beta2**stage_step)
        theta = np.clip(theta - lr * m_hat / (np.sqrt(v_hat) + 1e-8), -box_bound, box_bound)
        new_value, grad = problem.value_and_grad(theta)
        if not (math.isfinite(new_value) and np.all(np.isfinite(grad))):
            return None
        grad_norm = float(np.linalg.norm(grad))
        if new_value < best_value:
            best_theta, best_value, best_grad_norm = theta.copy(), new_value, grad_norm
        if grad_norm < opt.grad_tol:
            converged = True
            break
        # the objective-change test is only meaningful once the step size
        # has collapsed; with adaptive moments, tiny deltas also occur at
        # oscillation turning points during active descent
        if lr <= opt.learning_rate * 1e-6 and abs(new_value - value) < opt.obj_tol * (
            1.0 + abs(new_value)
        ):
            hits += 1
            if hits >= opt.obj_tol_hits:
                converged = True
                break
        else:
            hits = 0
        # once progress stalls, halve the step and restart from the best
        # point with fresh moments; with adaptive steps the iterates
        # otherwise orbit (or drift away from) the minimum. Progress is
        # relative to the best value seen, so near-interpolating fits
        # keep refining while noise-floor jitter does not hold the step
        # size up.
        if new_value < progress_ref - opt.progress_rtol * abs(progress_ref):
            progress_ref = new_value
            stall = 0
        else:
            stall += 1
            if stall >= opt.patience:
                lr *= opt.lr_decay
                stall = 0
                if lr < opt.min_learning_rate:
                    converged = True
                    break
                theta = best_theta.copy()
                progress_ref = best_value
                new_value, grad = problem.value_and_grad(theta)
                m = np.zeros_like(theta)
                v = np.zeros_like(theta)
                stage_step = 0
        value = new_value
    return best_theta, best_value, iterations, converged, best_grad_norm


# --------------------------------------------------------------------------
# fit


def fit(dataset: Dataset, bank: PretrainedBank, proj: ProjectionPair, config: FitConfig) -> FitResult:
    """Least-squares fit of a mixing measure; best restart wins.

    Deterministic given (dataset, config): all randomness flows from
    ``config.seed``. Restarts that hit a non-finite objective are aborted
    and recorded; if every restart aborts the result is marked ``failed``.
    """
    if config.setting == "neural_shared":
        reference = config.init.reference
        act2 = reference.act2 if reference is not None else config.activations[1]
        if not ACTIVATIONS[act2].has_curvature:
            raise ConfigurationError(
                f"value-side activation {act2!r} has identically zero second "
                "derivative; estimation requires a curved activation such as tanh"
            )
    rng = np.random.default_rng(int(config.seed))
    inits, warnings_out = _build_inits(config, proj.dim, rng)

    problem = _Problem(inits[0], bank, proj, dataset)
    best = None
    restart_objectives = []
    last_init = inits[0]
    for init_measure in inits:
        last_init = init_measure
        outcome = _minimize(problem, pack_parameters(init_measure), config.optimizer, config.box_bound)
        if outcome is None:
            restart_objectives.append(math.nan)
            continue
        restart_objectives.append(outcome[1])
        if best is None or outcome[1] < best[1]:
            best = outcome

    if best is None:
        return FitResult(
            measure=last_init,
            final_objective=math.nan,
            iterations=0,
            converged=False,
            restarts_used=len(inits),
            gradient_norm=math.nan,
            warnings=tuple(warnings_out),
            failed=True,
            failure_reason="every restart aborted on a non-finite objective",
            restart_objectives=tuple(restart_objectives),
        )

    theta, value, iterations, converged, grad_norm = best
    return FitResult(
        measure=unpack_parameters(theta, inits[0]),
        final_objective=value,
        iterations=iterations,
        converged=converged,
        restarts_used=len(inits),
        gradient_norm=grad_norm,
        warnings=tuple(warnings_out),
        restart_objectives=tuple(restart_objectives),
    )
