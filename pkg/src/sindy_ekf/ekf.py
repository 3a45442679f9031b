"""Joint state/coefficient extended Kalman filter on an adaptive SINDy model.

The augmented state is ``[x, xi_tilde]``: the ``n`` dynamic states followed by
the adaptive (masked) SINDy coefficients in the flattening order of
:class:`~sindy_ekf.model.AdaptivityMask`. Coefficients carry no dynamics of
their own; they drift only through process noise and move only in the
correction step.

Prediction advances the mean with one RK4 step of the model (coefficients
frozen over the step) and the covariance with one RK4 step of the Lyapunov
equation ``dP/dt = F P + P F^T + Q``. The Jacobian ``F`` is evaluated at the
pre-step mean, at the stage times ``t``, ``t + dt/2``, ``t + dt/2``, ``t + dt``.
Correction uses a linear selection operator and the Joseph-form update.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import SindyModel

log = logging.getLogger(__name__)

MAX_TRACE = 1e12
MAX_INNOVATION_COND = 1e12


class FilterDivergence(RuntimeError):
    def __init__(self, message: str, time: float | None = None, step: int | None = None):
        super().__init__(message)
        self.time = time
        self.step = step


@dataclass(frozen=True)
class FilterConfig:
    q_diag: np.ndarray
    r_diag: np.ndarray
    p0_diag: np.ndarray
    observed_indices: tuple[int, ...]
    dt: float

    def __post_init__(self):
        for name in ("q_diag", "r_diag", "p0_diag"):
            a = np.array(getattr(self, name), dtype=float).ravel()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        idx = tuple(int(i) for i in self.observed_indices)
        object.__setattr__(self, "observed_indices", idx)
        if len(set(idx)) != len(idx):
            raise ValueError("observed_indices must be distinct")
        if len(self.r_diag) != len(idx):
            raise ValueError("r_diag needs one entry per observed index")
        if np.any(self.r_diag <= 0):
            raise ValueError("r_diag entries must be > 0")
        if np.any(self.q_diag < 0) or np.any(self.p0_diag < 0):
            raise ValueError("q_diag and p0_diag entries must be >= 0")
        if len(self.q_diag) != len(self.p0_diag):
            raise ValueError("q_diag and p0_diag must have the same length")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def dim(self) -> int:
        return len(self.q_diag)

    def check_model(self, model: SindyModel) -> None:
        if self.dim != model.augmented_dim:
            raise ValueError(
                f"filter config has dimension {self.dim}, model augmented state has "
                f"{model.augmented_dim}")
        if any(i >= model.state_dim or i < 0 for i in self.observed_indices):
            raise ValueError("observed_indices must refer to dynamic states")

    def selection_matrix(self) -> np.ndarray:
        H = np.zeros((len(self.observed_indices), self.dim))
        H[np.arange(len(self.observed_indices)), list(self.observed_indices)] = 1.0
        return H


@dataclass(frozen=True)
class AugmentedBelief:
    mean: np.ndarray
    covariance: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).ravel()
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (len(mean), len(mean)):
            raise ValueError(f"covariance shape {cov.shape} does not match mean ({len(mean)})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def initial(cls, model: SindyModel, x0, config: FilterConfig, t0: float = 0.0):
        """Belief at ``t0``: given states, offline coefficients, ``diag(p0_diag)``."""
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (model.state_dim,):
            raise ValueError(f"x0 must have shape ({model.state_dim},)")
        config.check_model(model)
        mean = np.concatenate([x0, model.pack_adaptive()])
        return cls(mean, np.diag(config.p0_diag), t0)

    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _check_finite(belief: AugmentedBelief, where: str) -> None:
    if not (np.all(np.isfinite(belief.mean)) and np.all(np.isfinite(belief.covariance))):
        raise FilterDivergence(f"non-finite {where} at t={belief.time:.6g}", belief.time)
    tr = float(np.trace(belief.covariance))
    if tr > MAX_TRACE:
        raise FilterDivergence(f"covariance trace {tr:.3g} exceeds {MAX_TRACE:g} at "
                               f"t={belief.time:.6g}", belief.time)


def predict(belief: AugmentedBelief, model: SindyModel, config: FilterConfig) -> AugmentedBelief:
    n = model.state_dim
    if belief.mean.shape != (model.augmented_dim,):
        raise ValueError(
            f"belief has dimension {len(belief.mean)}, model expects {model.augmented_dim}")
    dt = config.dt
    t = belief.time
    x = belief.mean[:n]
    xi = model.coefficients_with(belief.mean[n:])
    lib = model.library

    def f(z, s):
        return xi.T @ lib.evaluate(z, s)

    k1 = f(x, t)
    k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(x + dt * k3, t + dt)
    mean = belief.mean.copy()
    mean[:n] = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    F1 = model.augmented_jacobian(x, t, xi)
    if model.adaptive_time_dependent():
        F2 = model.augmented_jacobian(x, t + 0.5 * dt, xi)
        F4 = model.augmented_jacobian(x, t + dt, xi)
    else:
        F2 = F4 = F1
    Q = np.diag(config.q_diag)
    P = belief.covariance

    def lyap(F, S):
        FS = F @ S
        return FS + FS.T + Q

    c1 = lyap(F1, P)
    c2 = lyap(F2, P + 0.5 * dt * c1)
    c3 = lyap(F2, P + 0.5 * dt * c2)
    c4 = lyap(F4, P + dt * c3)
    cov = _symmetrize(P + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4))
    out = AugmentedBelief(mean, cov, t + dt)
    _check_finite(out, "prediction")
    return out


def correct(belief: AugmentedBelief, y, config: FilterConfig,
            return_innovation: bool = False):
    """Kalman update with the selection operator ``h(z) = z[observed_indices]``."""
    y = np.asarray(y, dtype=float).ravel()
    idx = list(config.observed_indices)
    if y.shape != (len(idx),):
        raise ValueError(f"expected {len(idx)} observations, got {y.shape}")
    if not idx:
        return (belief, y) if return_innovation else belief
    P = belief.covariance
    innov = y - belief.mean[idx]
    PHt = P[:, idx]
    S = PHt[idx, :] + np.diag(config.r_diag)
    if np.linalg.cond(S) > MAX_INNOVATION_COND:
        raise FilterDivergence(f"innovation covariance ill-conditioned at t={belief.time:.6g}",
                               belief.time)
    G = np.linalg.solve(S, PHt.T).T
    mean = belief.mean + G @ innov
    # Joseph form: (I - G H) P (I - G H)^T + G R G^T
    A = -G @ config.selection_matrix()
    A[np.diag_indices_from(A)] += 1.0
    cov = A @ P @ A.T + (G * config.r_diag) @ G.T
    out = AugmentedBelief(mean, _symmetrize(cov), belief.time)
    _check_finite(out, "correction")
    return (out, innov) if return_innovation else out


@dataclass(frozen=True)
class ObservationSet:
    """Measurements ``values[j]`` of states ``observed_indices`` at ``times[j]``."""

    times: np.ndarray
    values: np.ndarray
    observed_indices: tuple[int, ...] = ()

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(len(times), -1)
        if values.shape[0] != len(times):
            raise ValueError("one observation row per time stamp required")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed_indices", tuple(int(i) for i in self.observed_indices))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, Sequence[float]]], observed_indices=()):
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros(0), np.zeros((0, len(observed_indices))), observed_indices)
        times = [p[0] for p in pairs]
        values = [np.atleast_1d(p[1]) for p in pairs]
        return cls(np.array(times), np.vstack(values), observed_indices)

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.values))

    def to_csv(self, path, channel_names: Sequence[str] | None = None) -> None:
        names = list(channel_names or [f"y{k + 1}" for k in range(self.values.shape[1])])
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *names])
            for t, y in zip(self.times, self.values):
                w.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in y)])

    @classmethod
    def from_csv(cls, path, observed_indices: Sequence[int]) -> "ObservationSet":
        """Read ``t, y1..yo``; the column count must match ``observed_indices``."""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"observation file not found: {path}")
        with path.open(newline="") as fh:
            header = next(csv.reader(fh), None)
        want = 1 + len(observed_indices)
        if header is None or len(header) != want:
            got = 0 if header is None else len(header)
            raise ValueError(f"{path}: expected {want} columns (t + {want - 1} channels), "
                             f"got {got}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.size and data.shape[1] != want:
            raise ValueError(f"{path}: expected {want} columns, got {data.shape[1]}")
        data = data.reshape(-1, want)
        return cls(data[:, 0], data[:, 1:], tuple(observed_indices))


@dataclass
class FilterRun:
    """Per-step posterior record; row 0 is the initial belief."""

    times: np.ndarray
    means: np.ndarray
    cov_diag: np.ndarray
    innovations: np.ndarray
    final_model: SindyModel
    final_belief: AugmentedBelief
    min_eigenvalues: np.ndarray | None = None
    snapshots: list = field(default_factory=list)
    max_asymmetry: float | None = None

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def state_means(self) -> np.ndarray:
        return self.means[:, :self.final_model.state_dim]

    def coefficient_means(self) -> np.ndarray:
        return self.means[:, self.final_model.state_dim:]

    def coefficient_std(self) -> np.ndarray:
        n = self.final_model.state_dim
        return np.sqrt(np.clip(self.cov_diag[:, n:], 0.0, None))

    def to_csv(self, path) -> None:
        model = self.final_model
        names = list(model.library.state_names) + model.adaptive_names()
        inov = np.linalg.norm(self.innovations, axis=1)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *names, *(f"var[{s}]" for s in names), "innovation_norm"])
            for j in range(len(self.times)):
                w.writerow([f"{self.times[j]:.17g}",
                            *(f"{v:.17g}" for v in self.means[j]),
                            *(f"{v:.17g}" for v in self.cov_diag[j]),
                            f"{inov[j]:.17g}"])


def assimilate(model0: SindyModel, config: FilterConfig, observations: ObservationSet,
               x0, t0: float | None = None, check_psd: bool = False,
               snapshot_every: int | None = None) -> FilterRun:
    """Run predict/correct over every observation.

    ``t0`` defaults to one step before the first observation. With
    ``check_psd`` the smallest covariance eigenvalue after each predict and
    each correct is recorded in ``FilterRun.min_eigenvalues`` (shape ``(T, 2)``),
    and the largest ``|P - P^T|`` entry seen in ``FilterRun.max_asymmetry``.
    ``snapshot_every`` keeps ``(time, SindyModel)`` pairs of the adapted model
    every that many steps (plus the initial one) in ``FilterRun.snapshots``.
    """
    config.check_model(model0)
    if observations.observed_indices and \
            tuple(observations.observed_indices) != config.observed_indices:
        raise ValueError("observation channels differ from the filter's observed_indices")
    T = len(observations)
    times_obs = observations.times
    if t0 is None:
        t0 = float(times_obs[0] - config.dt) if T else 0.0
    if T:
        grid = t0 + config.dt * np.arange(1, T + 1)
        if not np.allclose(times_obs, grid, rtol=0.0, atol=1e-6 * config.dt + 1e-9 * abs(grid[-1])):
            raise ValueError("observation times must be uniformly spaced by dt after t0")
    belief = AugmentedBelief.initial(model0, x0, config, t0)
    m = config.dim
    o = len(config.observed_indices)
    times = np.empty(T + 1)
    means = np.empty((T + 1, m))
    cov_diag = np.empty((T + 1, m))
    innovations = np.full((T + 1, o), np.nan)
    min_eigs = np.empty((T, 2)) if check_psd else None
    asym = 0.0
    snapshots = [(t0, model0)] if snapshot_every else []
    times[0], means[0], cov_diag[0] = t0, belief.mean, np.diag(belief.covariance)
    n = model0.state_dim
    for j in range(T):
        try:
            prior = predict(belief, model0, config)
            if check_psd:
                min_eigs[j, 0] = np.linalg.eigvalsh(prior.covariance)[0]
                asym = max(asym, float(np.max(np.abs(prior.covariance - prior.covariance.T))))
            belief, innov = correct(prior, observations.values[j], config, return_innovation=True)
        except FilterDivergence as exc:
            exc.step = j + 1
            raise FilterDivergence(f"step {j + 1}: {exc}", exc.time, j + 1) from exc
        if check_psd:
            min_eigs[j, 1] = np.linalg.eigvalsh(belief.covariance)[0]
            asym = max(asym, float(np.max(np.abs(belief.covariance - belief.covariance.T))))
        # restamp on the observation grid so rounding in t += dt cannot drift
        belief = AugmentedBelief(belief.mean, belief.covariance, float(times_obs[j]))
        times[j + 1] = belief.time
        means[j + 1] = belief.mean
        cov_diag[j + 1] = np.diag(belief.covariance)
        innovations[j + 1] = innov
        if snapshot_every and (j + 1) % snapshot_every == 0:
            snapshots.append((belief.time, model0.unpack_adaptive(belief.mean[n:])))
    final = model0.unpack_adaptive(belief.mean[n:])
    return FilterRun(times, means, cov_diag, innovations, final, belief, min_eigs, snapshots,
                     asym if check_psd else None)
