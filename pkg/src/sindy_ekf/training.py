"""Offline identification of SINDy coefficients by thresholded ridge regression."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .library import FeatureLibrary

log = logging.getLogger(__name__)


class SingularRegressionError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SnapshotSet:
    """Sampled trajectory ``X`` with matching derivatives ``Xdot``.

    ``library`` optionally pins the library used to build the regression rows
    of this set (multi-frequency training uses one forcing frequency per set).
    """

    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray
    library: FeatureLibrary | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        derivs = np.atleast_2d(np.asarray(self.derivatives, dtype=float))
        if states.shape != derivs.shape:
            raise ValueError(f"states {states.shape} and derivatives {derivs.shape} differ")
        if times.shape != (states.shape[0],):
            raise ValueError("one time stamp per snapshot row required")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "derivatives", derivs)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class StlsqSettings:
    ridge_strength: float = 0.05
    threshold: float = 0.1
    max_iterations: int = 20

    def __post_init__(self):
        if self.ridge_strength < 0:
            raise ValueError("ridge_strength must be >= 0")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def _as_sets(data) -> list[SnapshotSet]:
    sets = [data] if isinstance(data, SnapshotSet) else list(data)
    if not sets:
        raise ValueError("no snapshot data")
    return sets


def _set_rows(library: FeatureLibrary, s: SnapshotSet):
    lib = s.library if s.library is not None else library
    if s.state_dim != library.state_dim or lib.n_terms != library.n_terms:
        raise ValueError(
            f"snapshot state_dim {s.state_dim} does not match library ({library.state_dim})")
    return lib.evaluate_many(s.states, s.times), s.derivatives


def assemble_regression(library: FeatureLibrary, data: SnapshotSet | Sequence[SnapshotSet]):
    """Library matrix ``Theta(X)`` (``T x p``); several sets are stacked row-wise.

    Returns ``(theta, xdot)``.
    """
    rows = [_set_rows(library, s) for s in _as_sets(data)]
    theta = np.vstack([r[0] for r in rows])
    if theta.shape[0] < library.n_terms:
        warnings.warn(f"only {theta.shape[0]} snapshots for {library.n_terms} library terms")
    return theta, np.vstack([r[1] for r in rows])


def compress_regression(library: FeatureLibrary, data: SnapshotSet | Sequence[SnapshotSet]):
    """Triangular stand-in ``(R, Z)`` for the stacked regression of ``data``.

    The thin QR factorisation ``[Theta | Xdot] = Q [R | Z]`` is accumulated one
    snapshot set at a time, so ``Theta`` is never held in full. Because
    ``Theta[:, S] = Q R[:, S]`` for every column subset ``S``, least squares (and
    ridge) fits on ``(R, Z)`` have the same minimisers as on ``(Theta, Xdot)``,
    and :func:`stlsq` returns the same coefficients for either pair.
    """
    sets = _as_sets(data)
    total = sum(len(s) for s in sets)
    if total < library.n_terms:
        warnings.warn(f"only {total} snapshots for {library.n_terms} library terms")
    p = library.n_terms
    acc = None
    for s in sets:
        block = np.hstack(_set_rows(library, s))
        if acc is not None:
            block = np.vstack([acc, block])
        acc = np.linalg.qr(block, mode="r")
    return acc[:, :p], acc[:, p:]


def _ridge(theta: np.ndarray, y: np.ndarray, delta: float, column: int, support) -> np.ndarray:
    # Stacked form [Theta; sqrt(delta) I] avoids squaring the condition number.
    k = theta.shape[1]
    if delta > 0:
        a = np.vstack([theta, np.sqrt(delta) * np.eye(k)])
        b = np.concatenate([y, np.zeros(k)])
    else:
        a, b = theta, y
    coef, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < k:
        raise SingularRegressionError(
            f"rank-deficient regression for column {column} on support {list(support)}")
    return coef


def stlsq(theta, xdot, settings: StlsqSettings = StlsqSettings(), history: list | None = None):
    """Sequentially thresholded ridge least squares, one column of ``xdot`` at a time.

    Each column is first fitted by ridge regression over the full library;
    entries with magnitude below ``settings.threshold`` are zeroed and the ridge
    problem is re-solved on the surviving support, until the support stops
    changing or ``max_iterations`` passes have run.

    If ``history`` is given, the support (boolean ``(p, n)``) after every pass
    is appended to it.
    """
    theta = np.asarray(theta, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    if xdot.ndim == 1:
        xdot = xdot[:, None]
    if theta.shape[0] != xdot.shape[0]:
        raise ValueError(f"theta has {theta.shape[0]} rows, xdot has {xdot.shape[0]}")
    T, p = theta.shape
    n = xdot.shape[1]
    xi = np.zeros((p, n))
    supports = []
    for col in range(n):
        y = xdot[:, col]
        support = np.ones(p, dtype=bool)
        coef = _ridge(theta, y, settings.ridge_strength, col, np.flatnonzero(support))
        col_hist = [support.copy()]
        for _ in range(settings.max_iterations):
            new_support = support & (np.abs(coef) >= settings.threshold)
            coef = np.where(new_support, coef, 0.0)
            if not new_support.any():
                support = new_support
                col_hist.append(support.copy())
                break
            if np.array_equal(new_support, support):
                break
            support = new_support
            idx = np.flatnonzero(support)
            sub = _ridge(theta[:, idx], y, settings.ridge_strength, col, idx)
            coef = np.zeros(p)
            coef[idx] = sub
            col_hist.append(support.copy())
        xi[:, col] = coef
        supports.append(col_hist)
    if history is not None:
        depth = max(len(h) for h in supports)
        for step in range(depth):
            history.append(np.column_stack([h[min(step, len(h) - 1)] for h in supports]))
    return xi


def differentiate_snapshots(times, states) -> np.ndarray:
    """Second-order finite differences (central inside, one-sided at the ends)."""
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    if times.ndim != 1 or len(times) < 3:
        raise ValueError("need at least 3 time samples")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if states.shape[0] != len(times):
        raise ValueError("states must have one row per time sample")
    return np.gradient(states, times, axis=0, edge_order=2)


def read_snapshot_csv(path, state_dim: int | None = None) -> SnapshotSet:
    """Columns ``t, x1..xn[, xdot1..xdotn]``; derivatives estimated if absent."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"snapshot file not found: {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    cols = data.shape[1] - 1
    if state_dim is None:
        state_dim = cols
    if cols == state_dim:
        t, x = data[:, 0], data[:, 1:]
        return SnapshotSet(t, x, differentiate_snapshots(t, x))
    if cols == 2 * state_dim:
        return SnapshotSet(data[:, 0], data[:, 1:1 + state_dim], data[:, 1 + state_dim:])
    raise ValueError(
        f"{path}: expected {1 + state_dim} or {1 + 2 * state_dim} columns, got {data.shape[1]}")


def write_snapshot_csv(path, data: SnapshotSet, state_names: Sequence[str] | None = None) -> None:
    names = list(state_names or [f"x{k + 1}" for k in range(data.state_dim)])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *names, *(f"d{s}" for s in names)])
        for t, x, dx in zip(data.times, data.states, data.derivatives):
            w.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in x), *(f"{v:.17g}" for v in dx)])
