"""Convergence-rate experiments: Monte-Carlo function distances, the
slow-rate witness construction for untied prompts, sample-size sweeps, and
log-log slope fitting.

Seeding protocol: every sweep cell (n, rep) derives child seeds with
``child_seed(root, n, rep, role)`` where the hash is SHA-256 of the
pipe-joined decimal strings, truncated to the first 8 bytes (big-endian).
Because the derivation depends on the sample size value rather than its
index, extending the grid never perturbs existing cells, and paired sweeps
over different measure variants consume identical covariate and noise
draws per cell.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ConfigurationError, UsageError
from .estimation import ESTIMATOR_NOTE, FitConfig, fit
from .model import (
    InputLaw,
    NonSharedMeasure,
    RegressionModel,
    check_identifiability,
    gen_dataset,
    model_to_dict,
    regression_fn,
)
from .voronoi import loss_for_setting

__all__ = [
    "child_seed",
    "l2_norm_mc",
    "witness_sequence",
    "witness_closed_form",
    "SlopeFit",
    "fit_slope",
    "SweepSpec",
    "SweepResult",
    "run_sweep",
]


def child_seed(root: int, *parts) -> int:
    """Stable derived seed: SHA-256 of 'root|part|part|...', first 8 bytes."""
    key = "|".join(str(p) for p in (int(root), *parts))
    digest = hashlib.sha256(key.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def l2_norm_mc(f, g, law: InputLaw, dim: int, n_samples: int, seed: int) -> float:
    """Monte-Carlo L2 distance between two batch callables under ``law``.

    Draws are fixed by ``seed`` so paired comparisons share the same sample
    (common random numbers).
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be at least 1")
    x = law.sample(int(n_samples), int(dim), np.random.default_rng(int(seed)))
    diff = np.asarray(f(x), dtype=float) - np.asarray(g(x), dtype=float)
    return float(np.sqrt(np.mean(diff * diff)))


# --------------------------------------------------------------------------
# slow-rate witness


def witness_sequence(truth: NonSharedMeasure, index: int, r: int) -> NonSharedMeasure:
    """Witness measure with one value-split atom.

    The first true atom is replaced by two twins sharing its key prompt,
    with value prompts displaced by +/- (1/index) along the first
    coordinate and each carrying weight exp(b_1)/2 + 1/(2 index^{r+1});
    remaining true atoms are copied verbatim. Its loss_d1r distance to
    ``truth`` equals ``witness_closed_form`` exactly, while the induced
    regression functions differ only through the inflated total weight,
    one order of 1/index smaller.
    """
    if not isinstance(truth, NonSharedMeasure):
        raise UsageError("witness construction needs an untied truth measure")
    if truth.n_atoms < 1:
        raise UsageError("witness construction needs at least one true atom")
    if index < 1:
        raise UsageError("witness index must be at least 1")
    if int(r) != r or r < 1:
        raise ConfigurationError("r must be a positive integer")
    n = int(index)
    r = int(r)
    half_weight = 0.5 * math.exp(truth.log_weights[0]) + 0.5 / n ** (r + 1)
    bump = np.zeros(truth.dim)
    bump[0] = 1.0 / n
    log_weights = np.concatenate([[math.log(half_weight)] * 2, truth.log_weights[1:]])
    p_key = np.vstack([truth.p_key[0], truth.p_key[0], truth.p_key[1:]])
    p_value = np.vstack(
        [truth.p_value[0] + bump, truth.p_value[0] - bump, truth.p_value[1:]]
    )
    return NonSharedMeasure(log_weights, p_key, p_value)


def witness_closed_form(truth: NonSharedMeasure, index: int, r: int) -> float:
    """Loss value of the witness at ``index``: the weight surplus plus the
    inflated cell weight times index^-r."""
    n = float(index)
    surplus = n ** -(r + 1)
    return surplus + (math.exp(truth.log_weights[0]) + surplus) * n**-r


# --------------------------------------------------------------------------
# slope fitting


@dataclass(frozen=True)
class SlopeFit:
    """OLS line fit with a 95% confidence half-width for the slope."""

    slope: float
    intercept: float
    stderr: float
    half_width: float
    n_points: int

    @property
    def ci_low(self) -> float:
        return self.slope - self.half_width

    @property
    def ci_high(self) -> float:
        return self.slope + self.half_width

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "half_width": self.half_width,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_points": self.n_points,
        }


def fit_slope(xs, ys) -> SlopeFit:
    """Ordinary least squares of ys on xs with a t-quantile interval."""
    xs = np.asarray(xs, dtype=float).reshape(-1)
    ys = np.asarray(ys, dtype=float).reshape(-1)
    if xs.shape != ys.shape:
        raise ConfigurationError("xs and ys must have equal length")
    n = xs.shape[0]
    if n < 3:
        raise ConfigurationError("slope fitting needs at least 3 points")
    sxx = float(np.sum((xs - xs.mean()) ** 2))
    if sxx <= 1e-12 * n:
        raise ConfigurationError("degenerate x values: no spread to regress on")
    slope = float(np.sum((xs - xs.mean()) * (ys - ys.mean())) / sxx)
    intercept = float(ys.mean() - slope * xs.mean())
    resid = ys - (intercept + slope * xs)
    dof = n - 2
    stderr = float(math.sqrt(max(float(resid @ resid), 0.0) / dof / sxx))
    half_width = float(stats.t.ppf(0.975, dof) * stderr)
    return SlopeFit(slope, intercept, stderr, half_width, n)


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    """A rate experiment: one truth, a sample-size grid, and a fit recipe.

    ``fit_config`` acts as a template: its seed is replaced per cell, and
    for oracle-perturbed initialization without an explicit reference the
    truth measure is injected automatically.
    """

    setting: str
    truth: RegressionModel
    sample_sizes: tuple
    replications: int
    fit_config: FitConfig
    mc_samples: int
    seed: int
    voronoi_r: int = 2

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sample_sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError("sample_sizes must be strictly increasing")
        object.__setattr__(self, "sample_sizes", sizes)
        if self.replications < 1:
            raise ConfigurationError("replications must be at least 1")
        if self.mc_samples < 1:
            raise ConfigurationError("mc_samples must be at least 1")
        if self.setting != self.truth.measure.variant:
            raise ConfigurationError(
                f"setting {self.setting!r} != truth variant {self.truth.measure.variant!r}"
            )
        if self.fit_config.setting != self.setting:
            raise ConfigurationError("fit_config setting differs from sweep setting")

    def cell_seeds(self, n: int, rep: int) -> dict:
        return {
            "data": child_seed(self.seed, n, rep, "data"),
            "fit": child_seed(self.seed, n, rep, "fit"),
            "mc": child_seed(self.seed, n, rep, "mc"),
        }

    def echo(self) -> dict:
        init = self.fit_config.init
        return {
            "setting": self.setting,
            "sample_sizes": list(self.sample_sizes),
            "replications": self.replications,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "voronoi_r": self.voronoi_r,
            "fit_config": {
                "setting": self.fit_config.setting,
                "atom_budget": self.fit_config.atom_budget,
                "init": {"kind": init.kind, "restarts": init.restarts, "scale": init.scale},
                "box_bound": self.fit_config.box_bound,
                "optimizer": {
                    "learning_rate": self.fit_config.optimizer.learning_rate,
                    "max_iters": self.fit_config.optimizer.max_iters,
                    "grad_tol": self.fit_config.optimizer.grad_tol,
                    "obj_tol": self.fit_config.optimizer.obj_tol,
                },
            },
            "truth": model_to_dict(self.truth),
        }


_CSV_COLUMNS = ("setting", "n", "rep", "loss_name", "loss_value", "l2_error", "objective", "converged")


@dataclass(frozen=True)
class SweepResult:
    """Per-cell records, per-n aggregates, and log-log slopes of a sweep."""

    loss_name: str
    spec_echo: dict
    rows: tuple
    aggregates: tuple
    loss_slope: Optional[SlopeFit]
    l2_slope: Optional[SlopeFit]
    exclusions: int

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "loss_name": self.loss_name,
            "spec": self.spec_echo,
            "aggregates": list(self.aggregates),
            "slopes": {
                "loss": self.loss_slope.to_dict() if self.loss_slope else None,
                "l2": self.l2_slope.to_dict() if self.l2_slope else None,
            },
            "exclusions": self.exclusions,
            "estimator_note": ESTIMATOR_NOTE,
        }

    def json_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for row in self.rows:
            writer.writerow(
                [
                    row["setting"],
                    row["n"],
                    row["rep"],
                    row["loss_name"],
                    repr(float(row["loss_value"])),
                    repr(float(row["l2_error"])),
                    repr(float(row["objective"])),
                    "true" if row["converged"] else "false",
                ]
            )
        return buf.getvalue()

    def plot_text(self, kind: str) -> str:
        """Two-column (log n, log mean value) plot data for gnuplot-style tools."""
        key = {"loss": "mean_loss", "l2": "mean_l2"}[kind]
        label = self.loss_name if kind == "loss" else "l2_error"
        lines = [f"# log_n log_mean_{label}"]
        for agg in self.aggregates:
            mean = agg[key]
            if mean is not None and mean > 0:
                lines.append(f"{repr(math.log(agg['n']))} {repr(math.log(mean))}")
        return "\n".join(lines) + "\n"


def _resolved_fit_config(spec: SweepSpec, seed: int) -> FitConfig:
    cfg = replace(spec.fit_config, seed=seed)
    if cfg.init.kind == "oracle_perturb" and cfg.init.reference is None:
        cfg = replace(cfg, init=replace(cfg.init, reference=spec.truth.measure))
    return cfg


def _run_cell(spec: SweepSpec, loss_name: str, loss_fn, truth_fn, n: int, rep: int) -> dict:
    seeds = spec.cell_seeds(n, rep)
    dataset = gen_dataset(spec.truth, n, seeds["data"])
    result = fit(dataset, spec.truth.bank, spec.truth.proj, _resolved_fit_config(spec, seeds["fit"]))
    row = {
        "setting": spec.setting,
        "n": n,
        "rep": rep,
        "loss_name": loss_name,
        "converged": bool(result.converged) and not result.failed,
        "failed": bool(result.failed),
    }
    if result.failed:
        row.update({"loss_value": math.nan, "l2_error": math.nan, "objective": math.nan})
        return row
    fitted_fn = regression_fn(spec.truth.bank, spec.truth.proj, result.measure)
    row["loss_value"] = loss_fn(result.measure, spec.truth.measure)
    row["l2_error"] = l2_norm_mc(
        fitted_fn, truth_fn, spec.truth.input_law, spec.truth.proj.dim, spec.mc_samples, seeds["mc"]
    )
    row["objective"] = result.final_objective
    return row


def _mean_or_none(values):
    return float(np.mean(values)) if values else None


def _median_or_none(values):
    return float(np.median(values)) if values else None


def default_workers() -> int:
    env = os.environ.get("PREFIXMOE_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def run_sweep(spec: SweepSpec, max_workers: Optional[int] = None) -> SweepResult:
    """Execute every (n, rep) cell of the sweep and aggregate.

    Cells are independent; they may run on a thread pool (size from
    ``max_workers`` or the PREFIXMOE_THREADS environment variable) and are
    always merged in grid order, so results do not depend on scheduling.
    Failed fits are excluded from aggregates and counted.
    """
    ident = check_identifiability(spec.truth.measure, spec.truth.proj)
    if not ident.passed:
        raise ConfigurationError(
            f"truth fails the identifiability check (min projected key distance "
            f"{ident.min_distance:.3e} < {ident.tol:.1e})"
        )
    loss_name, loss_fn = loss_for_setting(spec.setting, spec.voronoi_r)
    truth_fn = regression_fn(spec.truth.bank, spec.truth.proj, spec.truth.measure)
    cells = [(n, rep) for n in spec.sample_sizes for rep in range(spec.replications)]
    workers = max_workers if max_workers is not None else default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(lambda cell: _run_cell(spec, loss_name, loss_fn, truth_fn, *cell), cells)
            )
    else:
        rows = [_run_cell(spec, loss_name, loss_fn, truth_fn, n, rep) for n, rep in cells]

    aggregates = []
    for n in spec.sample_sizes:
        sub = [r for r in rows if r["n"] == n]
        ok = [r for r in sub if not r["failed"]]
        aggregates.append(
            {
                "n": n,
                "mean_loss": _mean_or_none([r["loss_value"] for r in ok]),
                "median_loss": _median_or_none([r["loss_value"] for r in ok]),
                "mean_l2": _mean_or_none([r["l2_error"] for r in ok]),
                "median_l2": _median_or_none([r["l2_error"] for r in ok]),
                "mean_objective": _mean_or_none([r["objective"] for r in ok]),
                "fit_count": len(ok),
                "failure_count": len(sub) - len(ok),
            }
        )

    def _slope(key):
        points = [
            (math.log(a["n"]), math.log(a[key]))
            for a in aggregates
            if a[key] is not None and a[key] > 0
        ]
        if len(points) < 3:
            return None
        return fit_slope([p[0] for p in points], [p[1] for p in points])

    exclusions = sum(1 for r in rows if r["failed"])
    public_rows = tuple(
        {k: r[k] for k in ("setting", "n", "rep", "loss_name", "loss_value", "l2_error", "objective", "converged")}
        for r in rows
    )
    return SweepResult(
        loss_name=loss_name,
        spec_echo=spec.echo(),
        rows=public_rows,
        aggregates=tuple(aggregates),
        loss_slope=_slope("mean_loss"),
        l2_slope=_slope("mean_l2"),
        exclusions=exclusions,
    )
