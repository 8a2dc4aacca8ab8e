"""Nearest-atom cell assignment between two mixing measures and the
gate-weight/prompt-distance losses built on it.

Atoms are compared through the embedding of their variant: untied atoms
concatenate key and value prompts, tied atoms use the prompt itself, and
latent atoms use the pre-activation pair (w1 @ p, w2 @ p). Log-weights
never enter the distances; they only weight the loss terms. Cells are
indexed by the atoms of the reference ("true") measure, and a cell left
empty still contributes its full reference weight to the weight term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .model import LinearSharedMeasure, NeuralSharedMeasure, NonSharedMeasure

__all__ = [
    "CellAssignment",
    "assign_cells",
    "loss_d1r",
    "loss_d2",
    "loss_d3",
    "loss_for_setting",
]


@dataclass(frozen=True)
class CellAssignment:
    """For each true atom index j, the fitted atom indices nearest to it.

    ``distances`` is the full (n_fitted, n_true) matrix the assignment was
    computed from; ties go to the lowest true index.
    """

    cells: tuple
    distances: np.ndarray


def _check_pair(fitted, truth):
    if type(fitted) is not type(truth):
        raise UsageError(
            f"measure variants differ: {type(fitted).__name__} vs {type(truth).__name__}"
        )
    if fitted.n_atoms < 1 or truth.n_atoms < 1:
        raise UsageError("cell assignment needs non-empty measures")
    if fitted.dim != truth.dim:
        raise ConfigurationError("measures live in different dimensions")
    if isinstance(fitted, NeuralSharedMeasure) and fitted.latent_dim != truth.latent_dim:
        raise ConfigurationError("latent dimensions differ")


def assign_cells(fitted, truth) -> CellAssignment:
    """Assign every fitted atom to its nearest true atom."""
    _check_pair(fitted, truth)
    fe = fitted.atom_embeddings()
    te = truth.atom_embeddings()
    diff = fe[:, None, :] - te[None, :, :]
    distances = np.sqrt((diff**2).sum(axis=2))
    nearest = distances.argmin(axis=1)  # argmin takes the lowest index on ties
    cells = tuple(
        tuple(int(i) for i in np.flatnonzero(nearest == j)) for j in range(truth.n_atoms)
    )
    return CellAssignment(cells, distances)


def _weight_term(fitted, truth, cells) -> float:
    fw = fitted.weights
    tw = truth.weights
    return float(
        sum(abs(fw[list(cell)].sum() - tw[j]) for j, cell in enumerate(cells))
    )


def loss_d1r(fitted: NonSharedMeasure, truth: NonSharedMeasure, r: int) -> float:
    """Loss for untied prompts: per-cell gate-weight discrepancy plus
    weighted r-th powers of the key and value prompt distances.
    """
    if not isinstance(fitted, NonSharedMeasure) or not isinstance(truth, NonSharedMeasure):
        raise UsageError("loss_d1r expects untied measures on both sides")
    if int(r) != r or r < 1:
        raise ConfigurationError("r must be a positive integer")
    r = int(r)
    cells = assign_cells(fitted, truth).cells
    total = _weight_term(fitted, truth, cells)
    fw = fitted.weights
    for j, cell in enumerate(cells):
        for i in cell:
            dk = float(np.linalg.norm(fitted.p_key[i] - truth.p_key[j]))
            dv = float(np.linalg.norm(fitted.p_value[i] - truth.p_value[j]))
            total += fw[i] * (dk**r + dv**r)
    return float(total)


def loss_d2(fitted: LinearSharedMeasure, truth: LinearSharedMeasure) -> float:
    """Loss for tied prompts: weight discrepancy, first-power prompt
    distances on singleton cells, squared distances on crowded cells.
    """
    if not isinstance(fitted, LinearSharedMeasure) or not isinstance(truth, LinearSharedMeasure):
        raise UsageError("loss_d2 expects tied measures on both sides")
    cells = assign_cells(fitted, truth).cells
    total = _weight_term(fitted, truth, cells)
    fw = fitted.weights
    for j, cell in enumerate(cells):
        power = 1 if len(cell) == 1 else 2
        for i in cell:
            dp = float(np.linalg.norm(fitted.prompts[i] - truth.prompts[j]))
            total += fw[i] * dp**power
    return float(total)


def loss_d3(fitted: NeuralSharedMeasure, truth: NeuralSharedMeasure) -> float:
    """Loss for latent prompts, split by cell cardinality as in loss_d2 but
    measured on the pre-activation images (w1 @ p, w2 @ p) of each side.
    """
    if not isinstance(fitted, NeuralSharedMeasure) or not isinstance(truth, NeuralSharedMeasure):
        raise UsageError("loss_d3 expects latent measures on both sides")
    cells = assign_cells(fitted, truth).cells
    total = _weight_term(fitted, truth, cells)
    fw = fitted.weights
    d = fitted.dim
    fe = fitted.atom_embeddings()
    te = truth.atom_embeddings()
    for j, cell in enumerate(cells):
        power = 1 if len(cell) == 1 else 2
        for i in cell:
            d1 = float(np.linalg.norm(fe[i, :d] - te[j, :d]))
            d2 = float(np.linalg.norm(fe[i, d:] - te[j, d:]))
            total += fw[i] * (d1**power + d2**power)
    return float(total)


def loss_for_setting(setting: str, r: int = 2):
    """Return (loss_name, loss_fn) for a measure variant tag."""
    if setting == "non_shared":
        return f"d1_{int(r)}", lambda fitted, truth: loss_d1r(fitted, truth, r)
    if setting == "linear_shared":
        return "d2", loss_d2
    if setting == "neural_shared":
        return "d3", loss_d3
    raise ConfigurationError(f"unknown setting {setting!r}")
