"""General regression neural network (Gaussian kernel averaging).

The model memorizes its normalized training inputs and raw outputs; a
prediction is the kernel-weighted average of the stored outputs, so every
predicted component is a convex combination of stored values.  The only
trained parameter is the kernel width sigma, searched against the control
performance of the predictions on held-out initial states.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .lyapunov import ControlledSystem, evolve_batch
from .mlp import Normalizer
from .quantum import ValidationError

INFIDELITY_FLOOR = 1e-12


@dataclass
class GrnnModel:
    """Stored (normalized input, output) pairs plus the smoothing scale.

    ``d_spacing`` is the heuristic mean spacing 2/N^(1/n_inputs) between
    normalized training inputs; sigma searches are scaled by it.  ``sigma``
    stays None until tuned or assigned.
    """

    inputs_norm: np.ndarray
    outputs: np.ndarray
    normalizer: Normalizer
    d_spacing: float
    sigma: float | None = None

    @property
    def n_samples(self) -> int:
        return self.inputs_norm.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.inputs_norm.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.outputs.shape[1]


def grnn_build(x: np.ndarray, y: np.ndarray) -> GrnnModel:
    """Store the training set; fits the input normalizer and computes D."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError("training inputs must be a non-empty (N, d) matrix")
    if y.ndim != 2 or y.shape[0] != x.shape[0]:
        raise ValidationError("outputs must be (N, n_outputs) matching the inputs")
    if x.shape[0] == 1:
        # degenerate but legal: lone sample, normalizer pinned to zero span
        normalizer = Normalizer(x[0].copy(), x[0].copy())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            xn = normalizer.apply(x)
    else:
        normalizer = Normalizer.fit(x)
        xn = normalizer.apply(x)
    d_spacing = 2.0 / x.shape[0] ** (1.0 / x.shape[1])
    return GrnnModel(xn, y.copy(), normalizer, d_spacing)


def grnn_predict(model: GrnnModel, x: np.ndarray, sigma: float | None = None,
                 chunk: int | None = None) -> np.ndarray:
    """Kernel-average prediction for raw inputs ``x`` ((Q, d) or a vector).

    Queries are processed in chunks sized to keep the (chunk, N) distance
    matrix bounded (~40 MB) for pattern layers up to N ~ 1e5.  Queries whose
    pattern weights all underflow to zero fall back to the nearest stored
    sample's output; occurrences are counted in a warning.
    """
    if sigma is None:
        sigma = model.sigma
    if sigma is None or sigma <= 0:
        raise ValidationError("a positive sigma is required (tune or pass one)")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xq = x[None, :] if single else x
    if xq.shape[1] != model.n_inputs:
        raise ValidationError(f"query dimension {xq.shape[1]} != {model.n_inputs}")
    if chunk is None:
        chunk = max(16, int(5_000_000 / max(1, model.n_samples)))
    xqn = model.normalizer.apply(xq)
    stored_sq = np.sum(model.inputs_norm ** 2, axis=1)
    out = np.empty((xq.shape[0], model.n_outputs))
    fallbacks = 0
    inv = 1.0 / (2.0 * sigma * sigma)
    for lo in range(0, xqn.shape[0], chunk):
        q = xqn[lo:lo + chunk]
        d2 = np.sum(q ** 2, axis=1)[:, None] + stored_sq[None, :] - 2.0 * (q @ model.inputs_norm.T)
        np.maximum(d2, 0.0, out=d2)
        w = np.exp(-d2 * inv)
        denom = w.sum(axis=1)
        dead = denom <= 0.0
        if np.any(dead):
            fallbacks += int(dead.sum())
            nearest = np.argmin(d2[dead], axis=1)
            w[dead] = 0.0
            w[dead, nearest] = 1.0
            denom[dead] = 1.0
        out[lo:lo + chunk] = (w @ model.outputs) / denom[:, None]
    if fallbacks:
        warnings.warn(
            f"grnn_predict: {fallbacks} query point(s) underflowed all pattern "
            f"weights; used nearest stored sample")
    return out[0] if single else out


def avg_log_infidelity(fidelities) -> float:
    """Mean log10(1 - F); F = 1 entries are clamped to 1 - 1e-12 (reported)."""
    f = np.asarray(fidelities, dtype=float)
    if f.size == 0:
        raise ValidationError("empty fidelity list")
    infid = 1.0 - f
    clamped = int(np.sum(infid < INFIDELITY_FLOOR))
    if clamped:
        warnings.warn(f"avg_log_infidelity: clamped {clamped} fidelity value(s) at 1-1e-12")
        infid = np.maximum(infid, INFIDELITY_FLOOR)
    return float(np.mean(np.log10(infid)))


def sigma_grid(d_spacing: float, num: int = 40, lo_factor: float = 0.001,
               hi_factor: float = 1.0) -> np.ndarray:
    """Geometric sigma sweep over [lo_factor*D, hi_factor*D]."""
    return d_spacing * np.geomspace(lo_factor, hi_factor, num)


def predict_weight_matrix(model: GrnnModel, params_matrix: np.ndarray,
                          goal_index: int, dim: int,
                          sigma: float | None = None) -> np.ndarray:
    """Predicted coefficient rows expanded to full (B, n) weight vectors."""
    pred = grnn_predict(model, params_matrix, sigma=sigma)
    full = np.zeros((pred.shape[0], dim))
    cols = [l for l in range(dim) if l != goal_index - 1]
    full[:, cols] = pred
    return full


def grnn_tune_sigma(model: GrnnModel, validation_inputs: np.ndarray,
                    validation_states: np.ndarray, system: ControlledSystem,
                    grid, scheme=None, dt: float | None = None,
                    threads: int = 1) -> tuple[float, list[tuple[float, float]]]:
    """Pick sigma by the averaged logarithmic infidelity on held-out states.

    ``validation_inputs`` are raw parameter vectors for the model;
    ``validation_states`` the matching eigenbasis state vectors.  All
    (sigma, state) control runs are evolved in one batch.  Returns the
    minimizing sigma and the full (sigma, epsilon) curve.
    """
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValidationError("sigma grid must be non-empty and positive")
    n_val = validation_states.shape[0]
    p_all = np.concatenate([
        predict_weight_matrix(model, validation_inputs, system.basis.goal_index,
                              system.dim, sigma=s)
        for s in grid
    ])
    states_all = np.tile(validation_states, (grid.size, 1))
    res = evolve_batch(system, states_all, p_all, scheme=scheme, dt=dt, threads=threads)
    curve = []
    for i, s in enumerate(grid):
        eps = avg_log_infidelity(res.fidelities[i * n_val:(i + 1) * n_val])
        curve.append((float(s), eps))
    best_i = int(np.argmin([e for _, e in curve]))
    return curve[best_i][0], curve


# ---------------------------------------------------------------------------
# persistence (same versioned-JSON family as the MLP models)
# ---------------------------------------------------------------------------

_GRNN_FORMAT = "qlyap-grnn"
_FORMAT_VERSION = 1


def save_grnn(path, model: GrnnModel) -> None:
    doc = {
        "format": _GRNN_FORMAT,
        "version": _FORMAT_VERSION,
        "inputs_norm": model.inputs_norm.tolist(),
        "outputs": model.outputs.tolist(),
        "normalizer": model.normalizer.to_dict(),
        "d_spacing": model.d_spacing,
        "sigma": model.sigma,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_grnn(path) -> GrnnModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _GRNN_FORMAT or doc.get("version") != _FORMAT_VERSION:
        raise ValidationError(f"not a {_GRNN_FORMAT} v{_FORMAT_VERSION} document: {path}")
    return GrnnModel(
        np.asarray(doc["inputs_norm"], dtype=float),
        np.asarray(doc["outputs"], dtype=float),
        Normalizer.from_dict(doc["normalizer"]),
        float(doc["d_spacing"]),
        None if doc["sigma"] is None else float(doc["sigma"]),
    )
