"""Mixing measures, the frozen expert bank, and the gated regression model.

The regression function is a softmax-gated mixture: a fixed bank of experts
gated by quadratic forms, extended with prefix atoms whose gate direction
is a projected key prompt and whose expert output is the scalar projection
of a value prompt. Three atom parameterizations are supported:

* ``non_shared``    - independent key and value prompts per atom,
* ``linear_shared`` - one prompt used on both sides,
* ``neural_shared`` - one latent prompt pushed through two shared one-layer
  maps (activation applied element-wise).

Log-weights ``b`` enter the gate logits additively, so atom weights are
``exp(b)``. Compact parameter boxes are an optimization-time constraint
(see ``estimation``); construction only checks shapes and finiteness.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, ClassVar

import numpy as np

from ._util import frozen_array, softmax_rows
from .errors import ConfigurationError, UsageError

__all__ = [
    "Activation",
    "ACTIVATIONS",
    "PretrainedBank",
    "ProjectionPair",
    "NonSharedMeasure",
    "LinearSharedMeasure",
    "NeuralSharedMeasure",
    "MEASURE_VARIANTS",
    "InputLaw",
    "RegressionModel",
    "Dataset",
    "IdentifiabilityResult",
    "eval_regression",
    "gate_weights",
    "regression_fn",
    "gen_dataset",
    "check_identifiability",
    "gate_directions",
    "expert_scalars",
    "measure_to_dict",
    "measure_from_dict",
    "model_to_dict",
    "model_from_dict",
]


# --------------------------------------------------------------------------
# activations


@dataclass(frozen=True)
class Activation:
    """Element-wise activation with first and second derivatives.

    ``has_curvature`` marks activations whose second derivative is not
    identically zero; the estimation paths for the latent variant require
    a curved activation on the value side.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    second_deriv: Callable[[np.ndarray], np.ndarray]
    has_curvature: bool


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


ACTIVATIONS = {
    "tanh": Activation(
        "tanh",
        np.tanh,
        lambda x: 1.0 - np.tanh(x) ** 2,
        lambda x: -2.0 * np.tanh(x) * (1.0 - np.tanh(x) ** 2),
        True,
    ),
    "sigmoid": Activation(
        "sigmoid",
        _sigmoid,
        lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)),
        lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)) * (1.0 - 2.0 * _sigmoid(x)),
        True,
    ),
    # test-only for estimation purposes: zero curvature on the value side
    "identity": Activation(
        "identity",
        lambda x: np.asarray(x, dtype=float),
        lambda x: np.ones_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        False,
    ),
}


# --------------------------------------------------------------------------
# frozen components


@dataclass(frozen=True)
class PretrainedBank:
    """Frozen bank of gating quadratic forms, biases, and expert parameters.

    gate_mats: (n_experts, dim, dim), gate_biases: (n_experts,),
    expert_params: (n_experts, dim) for linear experts eta^T x, or
    (n_experts, dim + 1) for affine experts with a trailing offset.
    """

    gate_mats: np.ndarray
    gate_biases: np.ndarray
    expert_params: np.ndarray
    expert_form: str = "linear"

    def __post_init__(self):
        mats = np.asarray(self.gate_mats, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ConfigurationError("gate_mats must be (n_experts, dim, dim)")
        n, dim = mats.shape[0], mats.shape[1]
        if n < 1:
            raise ConfigurationError("bank needs at least one expert")
        if self.expert_form not in ("linear", "affine"):
            raise ConfigurationError(f"unknown expert_form {self.expert_form!r}")
        width = dim if self.expert_form == "linear" else dim + 1
        object.__setattr__(self, "gate_mats", frozen_array(mats, (n, dim, dim), "gate_mats"))
        object.__setattr__(self, "gate_biases", frozen_array(self.gate_biases, (n,), "gate_biases"))
        object.__setattr__(self, "expert_params", frozen_array(self.expert_params, (n, width), "expert_params"))

    @property
    def n_experts(self) -> int:
        return self.gate_mats.shape[0]

    @property
    def dim(self) -> int:
        return self.gate_mats.shape[1]

    @classmethod
    def random(cls, n_experts: int, dim: int, seed: int, expert_form: str = "linear") -> "PretrainedBank":
        """Seeded bank: small symmetric gating curvature, uniform biases,
        and normalized Gaussian expert parameters."""
        rng = np.random.default_rng(int(seed))
        raw = rng.standard_normal((n_experts, dim, dim))
        mats = 0.1 * 0.5 * (raw + np.transpose(raw, (0, 2, 1)))
        biases = rng.uniform(-0.5, 0.5, size=n_experts)
        eta = rng.standard_normal((n_experts, dim)) / math.sqrt(dim)
        if expert_form == "affine":
            eta = np.hstack([eta, rng.uniform(-0.5, 0.5, size=(n_experts, 1))])
        return cls(mats, biases, eta, expert_form)

    def gate_logits(self, x2d: np.ndarray) -> np.ndarray:
        """Per-sample logits x^T A_j x + a_j, shape (n_samples, n_experts)."""
        quad = np.einsum("ni,jik,nk->nj", x2d, self.gate_mats, x2d)
        return quad + self.gate_biases

    def expert_values(self, x2d: np.ndarray) -> np.ndarray:
        """Per-sample expert outputs h(x, eta_j), shape (n_samples, n_experts)."""
        if self.expert_form == "linear":
            return x2d @ self.expert_params.T
        return x2d @ self.expert_params[:, :-1].T + self.expert_params[:, -1]


@dataclass(frozen=True)
class ProjectionPair:
    """Frozen gate projection (dim x dim) and scalar output map (length dim).

    ``b`` maps key prompts into gate directions; ``c`` is the single row of
    the output projection, so every prefix expert is the scalar ``c @ p``.
    """

    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ConfigurationError("b must be a square matrix")
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if c.shape[0] != b.shape[0]:
            raise ConfigurationError(f"c has length {c.shape[0]}, expected {b.shape[0]}")
        smallest = float(np.linalg.svd(b, compute_uv=False)[-1]) if b.size else 0.0
        if smallest <= 1e-8:
            warnings.warn(
                f"gate projection is numerically rank-deficient (smallest singular value {smallest:.3e})",
                stacklevel=2,
            )
        object.__setattr__(self, "b", frozen_array(b, b.shape, "b"))
        object.__setattr__(self, "c", frozen_array(c, c.shape, "c"))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    @classmethod
    def random(cls, dim: int, seed: int) -> "ProjectionPair":
        rng = np.random.default_rng(int(seed))
        return cls(rng.standard_normal((dim, dim)), rng.standard_normal(dim) / math.sqrt(dim))


# --------------------------------------------------------------------------
# mixing measures


@dataclass(frozen=True)
class NonSharedMeasure:
    """Atoms (log-weight, key prompt, value prompt) with untied prompts."""

    variant: ClassVar[str] = "non_shared"

    log_weights: np.ndarray
    p_key: np.ndarray
    p_value: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        pk = np.asarray(self.p_key, dtype=float)
        pv = np.asarray(self.p_value, dtype=float)
        if pk.ndim != 2 or pv.ndim != 2:
            raise ConfigurationError("prompts must be 2-D (n_atoms, dim)")
        if pk.shape != pv.shape or pk.shape[0] != lw.shape[0]:
            raise ConfigurationError("atom arrays disagree in shape")
        object.__setattr__(self, "log_weights", frozen_array(lw, lw.shape, "log_weights"))
        object.__setattr__(self, "p_key", frozen_array(pk, pk.shape, "p_key"))
        object.__setattr__(self, "p_value", frozen_array(pv, pv.shape, "p_value"))

    @property
    def n_atoms(self) -> int:
        return self.log_weights.shape[0]

    @property
    def dim(self) -> int:
        return self.p_key.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def key_prompts(self) -> np.ndarray:
        return self.p_key

    def value_prompts(self) -> np.ndarray:
        return self.p_value

    def atom_embeddings(self) -> np.ndarray:
        """Concatenated (key, value) prompt per atom, used for cell assignment."""
        return np.hstack([self.p_key, self.p_value])


@dataclass(frozen=True)
class LinearSharedMeasure:
    """Atoms (log-weight, prompt) with the prompt tied across key and value."""

    variant: ClassVar[str] = "linear_shared"

    log_weights: np.ndarray
    prompts: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        p = np.asarray(self.prompts, dtype=float)
        if p.ndim != 2:
            raise ConfigurationError("prompts must be 2-D (n_atoms, dim)")
        if p.shape[0] != lw.shape[0]:
            raise ConfigurationError("atom arrays disagree in shape")
        object.__setattr__(self, "log_weights", frozen_array(lw, lw.shape, "log_weights"))
        object.__setattr__(self, "prompts", frozen_array(p, p.shape, "prompts"))

    @property
    def n_atoms(self) -> int:
        return self.log_weights.shape[0]

    @property
    def dim(self) -> int:
        return self.prompts.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def key_prompts(self) -> np.ndarray:
        return self.prompts

    def value_prompts(self) -> np.ndarray:
        return self.prompts

    def atom_embeddings(self) -> np.ndarray:
        return self.prompts

    def to_non_shared(self) -> NonSharedMeasure:
        """Equivalent untied measure with p_key = p_value = prompt."""
        return NonSharedMeasure(self.log_weights, self.prompts, self.prompts)


@dataclass(frozen=True)
class NeuralSharedMeasure:
    """Atoms (log-weight, latent prompt) plus two shared one-layer maps.

    Key prompts are ``act1(w1 @ p)`` and value prompts ``act2(w2 @ p)``;
    the atom identity for cell assignment is the pre-activation pair
    ``(w1 @ p, w2 @ p)``.
    """

    variant: ClassVar[str] = "neural_shared"

    w1: np.ndarray
    w2: np.ndarray
    log_weights: np.ndarray
    prompts: np.ndarray
    act1: str = "tanh"
    act2: str = "tanh"

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=float)
        w2 = np.asarray(self.w2, dtype=float)
        if w1.ndim != 2 or w2.shape != w1.shape:
            raise ConfigurationError("w1 and w2 must be 2-D with equal shapes")
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        p = np.asarray(self.prompts, dtype=float)
        if p.ndim != 2 or p.shape[1] != w1.shape[1]:
            raise ConfigurationError("prompts must be (n_atoms, latent_dim)")
        if p.shape[0] != lw.shape[0]:
            raise ConfigurationError("atom arrays disagree in shape")
        for name in (self.act1, self.act2):
            if name not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {name!r}")
        object.__setattr__(self, "w1", frozen_array(w1, w1.shape, "w1"))
        object.__setattr__(self, "w2", frozen_array(w2, w2.shape, "w2"))
        object.__setattr__(self, "log_weights", frozen_array(lw, lw.shape, "log_weights"))
        object.__setattr__(self, "prompts", frozen_array(p, p.shape, "prompts"))

    @property
    def n_atoms(self) -> int:
        return self.log_weights.shape[0]

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def satisfies_curvature(self) -> bool:
        """True when the value-side activation has nonvanishing second
        derivative; estimation refuses measures where this fails."""
        return ACTIVATIONS[self.act2].has_curvature

    def key_prompts(self) -> np.ndarray:
        return ACTIVATIONS[self.act1].fn(self.prompts @ self.w1.T)

    def value_prompts(self) -> np.ndarray:
        return ACTIVATIONS[self.act2].fn(self.prompts @ self.w2.T)

    def atom_embeddings(self) -> np.ndarray:
        return np.hstack([self.prompts @ self.w1.T, self.prompts @ self.w2.T])


MEASURE_VARIANTS = {
    cls.variant: cls
    for cls in (NonSharedMeasure, LinearSharedMeasure, NeuralSharedMeasure)
}


def gate_directions(measure, proj: ProjectionPair) -> np.ndarray:
    """Projected key prompts, one gate direction per atom, shape (n_atoms, dim)."""
    return measure.key_prompts() @ proj.b.T


def expert_scalars(measure, proj: ProjectionPair) -> np.ndarray:
    """Projected value prompts: the constant expert output per atom."""
    return measure.value_prompts() @ proj.c


# --------------------------------------------------------------------------
# input law, model, dataset


@dataclass(frozen=True)
class InputLaw:
    """Sampling law for the covariates.

    ``uniform``: independent coordinates on [low, high].
    ``gaussian_trunc``: standard normal vectors, resampled until the norm
    is at most ``radius``.
    """

    kind: str = "uniform"
    low: float = -1.0
    high: float = 1.0
    radius: float = 3.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian_trunc"):
            raise ConfigurationError(f"unknown input law {self.kind!r}")
        if self.kind == "uniform" and not self.low < self.high:
            raise ConfigurationError("uniform law needs low < high")
        if self.kind == "gaussian_trunc" and not self.radius > 0:
            raise ConfigurationError("truncation radius must be positive")

    def sample(self, count: int, dim: int, rng) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=(count, dim))
        x = rng.standard_normal((count, dim))
        while True:
            bad = np.linalg.norm(x, axis=1) > self.radius
            if not bad.any():
                return x
            x[bad] = rng.standard_normal((int(bad.sum()), dim))

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "low": self.low, "high": self.high}
        return {"kind": "gaussian_trunc", "radius": self.radius}

    @classmethod
    def from_dict(cls, data: dict) -> "InputLaw":
        kind = data.get("kind", "uniform")
        if kind == "uniform":
            return cls("uniform", low=float(data.get("low", -1.0)), high=float(data.get("high", 1.0)))
        return cls("gaussian_trunc", radius=float(data.get("radius", 3.0)))


@dataclass(frozen=True)
class RegressionModel:
    """Generating model: bank + projections + mixing measure + noise level."""

    bank: PretrainedBank
    proj: ProjectionPair
    measure: object
    noise_sd: float
    input_law: InputLaw = field(default_factory=InputLaw)

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ConfigurationError("noise_sd must be nonnegative")
        if type(self.measure) not in MEASURE_VARIANTS.values():
            raise ConfigurationError("measure must be one of the three variants")
        if self.bank.dim != self.proj.dim:
            raise ConfigurationError("bank and projection dims differ")
        if self.measure.n_atoms and self.measure.dim != self.proj.dim:
            raise ConfigurationError("measure and projection dims differ")

    @property
    def setting(self) -> str:
        return self.measure.variant


def _gate_logits(bank: PretrainedBank, proj: ProjectionPair, measure, x2d: np.ndarray) -> np.ndarray:
    logits = bank.gate_logits(x2d)
    if measure.n_atoms:
        prefix = x2d @ gate_directions(measure, proj).T + measure.log_weights
        logits = np.hstack([logits, prefix])
    return logits


def _predict(bank: PretrainedBank, proj: ProjectionPair, measure, x2d: np.ndarray) -> np.ndarray:
    gates = softmax_rows(_gate_logits(bank, proj, measure, x2d))
    values = bank.expert_values(x2d)
    if measure.n_atoms:
        scalars = np.broadcast_to(expert_scalars(measure, proj), (x2d.shape[0], measure.n_atoms))
        values = np.hstack([values, scalars])
    return (gates * values).sum(axis=1)


def _as_batch(x, dim: int):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    batch = np.atleast_2d(arr)
    if batch.shape[1] != dim:
        raise ConfigurationError(f"input dim {batch.shape[1]} != model dim {dim}")
    return batch, single


def eval_regression(model: RegressionModel, x):
    """Evaluate the regression function at one point (float) or a batch
    of rows (1-D array)."""
    batch, single = _as_batch(x, model.proj.dim)
    out = _predict(model.bank, model.proj, model.measure, batch)
    return float(out[0]) if single else out


def gate_weights(model: RegressionModel, x) -> np.ndarray:
    """Softmax gate weights over bank experts then prefix atoms, per row."""
    batch, single = _as_batch(x, model.proj.dim)
    gates = softmax_rows(_gate_logits(model.bank, model.proj, model.measure, batch))
    return gates[0] if single else gates


def regression_fn(bank: PretrainedBank, proj: ProjectionPair, measure) -> Callable[[np.ndarray], np.ndarray]:
    """Batch callable x2d -> values for the given components."""

    def fn(x2d: np.ndarray) -> np.ndarray:
        return _predict(bank, proj, measure, np.atleast_2d(np.asarray(x2d, dtype=float)))

    return fn


@dataclass(frozen=True)
class Dataset:
    """Sampled (x, y) pairs plus the seed and generating-model description."""

    x: np.ndarray
    y: np.ndarray
    seed: int
    provenance: dict

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ConfigurationError("x must be (n, dim) matching y")
        if x.shape[0] < 1:
            raise ConfigurationError("dataset needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("x: non-finite entries")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @staticmethod
    def meta_path(csv_path) -> Path:
        p = Path(csv_path)
        return p.with_name(p.stem + ".meta.json")

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x_{j + 1}" for j in range(self.dim)] + ["y"])
        for row, value in zip(self.x, self.y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(value))])
        return buf.getvalue()

    def save(self, csv_path) -> None:
        """Write the sample as CSV plus a sidecar metadata JSON."""
        path = Path(csv_path)
        path.write_text(self.csv_text())
        meta = {"version": 1, "seed": self.seed, "n": self.n_samples, **self.provenance}
        self.meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path) -> "Dataset":
        path = Path(csv_path)
        meta = json.loads(cls.meta_path(path).read_text())
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            dim = len(header) - 1
            xs, ys = [], []
            for row in reader:
                if len(row) != dim + 1:
                    raise ConfigurationError(f"{path}: malformed row {row!r}")
                xs.append([float(v) for v in row[:dim]])
                ys.append(float(row[dim]))
        seed = int(meta.get("seed", 0))
        provenance = {k: v for k, v in meta.items() if k not in ("version",)}
        return cls(np.asarray(xs), np.asarray(ys), seed, provenance)


def gen_dataset(model: RegressionModel, n_samples: int, seed: int) -> Dataset:
    """Draw covariates from the model's law and add centered Gaussian noise.

    Deterministic given ``seed``; the covariates are drawn first and the
    noise second, so paired runs over different measures consume identical
    randomness.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be at least 1")
    rng = np.random.default_rng(int(seed))
    x = model.input_law.sample(n_samples, model.proj.dim, rng)
    noise = rng.normal(0.0, model.noise_sd, size=n_samples)
    y = _predict(model.bank, model.proj, model.measure, x) + noise
    provenance = {
        "setting": model.measure.variant,
        "seed": int(seed),
        "n": int(n_samples),
        "model": model_to_dict(model),
    }
    return Dataset(x, y, int(seed), provenance)


@dataclass(frozen=True)
class IdentifiabilityResult:
    passed: bool
    min_distance: float
    tol: float


def check_identifiability(measure, proj: ProjectionPair, tol: float = 1e-6) -> IdentifiabilityResult:
    """Advisory check that projected key prompts are pairwise separated.

    A single atom passes vacuously with infinite recorded distance.
    """
    if measure.n_atoms < 1:
        raise UsageError("identifiability check needs at least one atom")
    if measure.n_atoms == 1:
        return IdentifiabilityResult(True, math.inf, tol)
    dirs = gate_directions(measure, proj)
    diff = dirs[:, None, :] - dirs[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    upper = dist[np.triu_indices(measure.n_atoms, k=1)]
    min_distance = float(upper.min())
    return IdentifiabilityResult(min_distance >= tol, min_distance, tol)


# --------------------------------------------------------------------------
# serialization


def measure_to_dict(measure) -> dict:
    data = {"variant": measure.variant, "log_weights": measure.log_weights.tolist()}
    if isinstance(measure, NonSharedMeasure):
        data["p_key"] = measure.p_key.tolist()
        data["p_value"] = measure.p_value.tolist()
    elif isinstance(measure, LinearSharedMeasure):
        data["prompts"] = measure.prompts.tolist()
    else:
        data["w1"] = measure.w1.tolist()
        data["w2"] = measure.w2.tolist()
        data["prompts"] = measure.prompts.tolist()
        data["act1"] = measure.act1
        data["act2"] = measure.act2
    return data


def measure_from_dict(data: dict):
    variant = data.get("variant")
    if variant not in MEASURE_VARIANTS:
        raise ConfigurationError(f"unknown measure variant {variant!r}")
    if variant == "non_shared":
        return NonSharedMeasure(data["log_weights"], data["p_key"], data["p_value"])
    if variant == "linear_shared":
        return LinearSharedMeasure(data["log_weights"], data["prompts"])
    return NeuralSharedMeasure(
        data["w1"],
        data["w2"],
        data["log_weights"],
        data["prompts"],
        data.get("act1", "tanh"),
        data.get("act2", "tanh"),
    )


def bank_to_dict(bank: PretrainedBank) -> dict:
    return {
        "gate_mats": bank.gate_mats.tolist(),
        "gate_biases": bank.gate_biases.tolist(),
        "expert_params": bank.expert_params.tolist(),
        "expert_form": bank.expert_form,
    }


def bank_from_dict(data: dict) -> PretrainedBank:
    if "random" in data:
        spec = data["random"]
        return PretrainedBank.random(
            int(spec["n_experts"]),
            int(spec["dim"]),
            int(spec["seed"]),
            spec.get("expert_form", "linear"),
        )
    return PretrainedBank(
        data["gate_mats"],
        data["gate_biases"],
        data["expert_params"],
        data.get("expert_form", "linear"),
    )


def proj_to_dict(proj: ProjectionPair) -> dict:
    return {"b": proj.b.tolist(), "c": proj.c.tolist()}


def proj_from_dict(data: dict) -> ProjectionPair:
    if "random" in data:
        spec = data["random"]
        return ProjectionPair.random(int(spec["dim"]), int(spec["seed"]))
    return ProjectionPair(data["b"], data["c"])


def model_to_dict(model: RegressionModel) -> dict:
    return {
        "bank": bank_to_dict(model.bank),
        "proj": proj_to_dict(model.proj),
        "measure": measure_to_dict(model.measure),
        "noise_sd": float(model.noise_sd),
        "input_law": model.input_law.to_dict(),
    }


def model_from_dict(data: dict) -> RegressionModel:
    try:
        return RegressionModel(
            bank=bank_from_dict(data["bank"]),
            proj=proj_from_dict(data["proj"]),
            measure=measure_from_dict(data["measure"]),
            noise_sd=float(data["noise_sd"]),
            input_law=InputLaw.from_dict(data.get("input_law", {})),
        )
    except KeyError as exc:
        raise ConfigurationError(f"model description missing field {exc.args[0]!r}") from exc
