"""Case-study definitions: true dynamics, noisy measurements, training sets, sweeps.

Every true system here is polynomial in the state (plus a cosine forcing for
the MEMS arch), so it is described on the same library as the SINDy model:
each named :class:`Parameter` places ``sign * value(t)`` at one
``(term, equation)`` entry of the coefficient matrix. ``reference`` values
generate the offline training data; ``schedule`` drives the truth that the
filter observes.
"""
from __future__ import annotations

import math
import shlex
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .ekf import FilterConfig, ObservationSet
from .library import CosineForcing, FeatureLibrary, build_polynomial_library
from .model import AdaptivityMask, SindyModel
from .training import SnapshotSet, StlsqSettings, compress_regression, stlsq


class SimulationBlowUp(RuntimeError):
    pass


# --- parameter schedules ---------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t):
        return np.full(np.shape(t), float(self.value)) if np.ndim(t) else float(self.value)

    def describe(self) -> str:
        return f"constant value={self.value!r}"


@dataclass(frozen=True)
class Step:
    """``v0`` before ``t_switch``, ``v1`` from ``t_switch`` on."""

    v0: float
    v1: float
    t_switch: float

    def __call__(self, t):
        return np.where(np.asarray(t) >= self.t_switch, self.v1, self.v0) if np.ndim(t) \
            else (self.v1 if t >= self.t_switch else self.v0)

    def describe(self) -> str:
        return f"step v0={self.v0!r} v1={self.v1!r} t_switch={self.t_switch!r}"


@dataclass(frozen=True)
class LinearRamp:
    """Linear from ``v0`` at ``t0`` to ``v1`` at ``t1``; held constant outside."""

    v0: float
    v1: float
    t0: float
    t1: float

    def __call__(self, t):
        s = np.clip((np.asarray(t, dtype=float) - self.t0) / (self.t1 - self.t0), 0.0, 1.0)
        out = self.v0 + (self.v1 - self.v0) * s
        return out if np.ndim(t) else float(out)

    def describe(self) -> str:
        return f"ramp v0={self.v0!r} v1={self.v1!r} t0={self.t0!r} t1={self.t1!r}"


@dataclass(frozen=True)
class Sinusoid:
    center: float
    amplitude: float
    period: float
    phase: float = 0.0

    def __call__(self, t):
        out = self.center + self.amplitude * np.sin(
            2.0 * np.pi * np.asarray(t, dtype=float) / self.period + self.phase)
        return out if np.ndim(t) else float(out)

    def describe(self) -> str:
        return (f"sinusoid center={self.center!r} amplitude={self.amplitude!r} "
                f"period={self.period!r} phase={self.phase!r}")


ParameterSchedule = Union[Constant, Step, LinearRamp, Sinusoid]

_SCHEDULE_KINDS = {"constant": Constant, "step": Step, "ramp": LinearRamp,
                   "sinusoid": Sinusoid}


def parse_schedule(text: str) -> ParameterSchedule:
    """Inverse of ``schedule.describe()``, e.g. ``"step v0=-0.1 v1=-0.09 t_switch=50"``."""
    toks = shlex.split(text)
    if not toks or toks[0] not in _SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule {text!r}; expected one of {sorted(_SCHEDULE_KINDS)}")
    kwargs = {}
    for tok in toks[1:]:
        key, _, val = tok.partition("=")
        kwargs[key] = float(val)
    return _SCHEDULE_KINDS[toks[0]](**kwargs)


# --- scenario types --------------------------------------------------------

@dataclass(frozen=True)
class Parameter:
    """One named coefficient of the true system.

    The coefficient matrix entry is ``sign * value``. ``q`` / ``p0`` are the
    filter tuning of adaptive parameters; ``initial`` overrides the offline
    SINDy estimate as the filter's starting value (parameter units).
    """

    name: str
    term: str
    equation: str
    reference: float
    schedule: ParameterSchedule | None = None
    sign: float = 1.0
    adaptive: bool = False
    initial: float | None = None
    q: float = 0.0
    p0: float = 0.0

    @property
    def truth(self) -> ParameterSchedule:
        return self.schedule if self.schedule is not None else Constant(self.reference)


@dataclass(frozen=True)
class TrainingSpec:
    """Noise-free trajectories for the offline fit: one per initial condition
    and forcing frequency (frequencies are ignored for unforced libraries)."""

    initial_conditions: tuple[tuple[float, ...], ...]
    duration: float
    dt: float
    forcing_frequencies: tuple[float, ...] = ()


@dataclass(frozen=True)
class FrcSpec:
    omega_min: float = 0.95
    omega_max: float = 1.05
    n_points: int = 50
    duration: float = 5000.0
    dt: float = 0.05
    settle_fraction: float = 0.8
    displacement_indices: tuple[int, ...] = (0, 1)

    def grid(self, n_points: int | None = None) -> np.ndarray:
        return np.linspace(self.omega_min, self.omega_max, n_points or self.n_points)


@dataclass(frozen=True)
class Scenario:
    name: str
    library: FeatureLibrary
    parameters: tuple[Parameter, ...]
    x0: tuple[float, ...]
    t0: float
    t_end: float
    dt: float
    training: TrainingSpec
    stlsq: StlsqSettings
    observed: tuple[str, ...]
    q_states: tuple[float, ...]
    p0_states: tuple[float, ...]
    r_diag: tuple[float, ...]
    snr_db: float | None = None
    snr_is_linear: bool = False
    seed: int = 0
    warmup: float = 0.0
    frc: FrcSpec | None = None

    def __post_init__(self):
        n = self.library.state_dim
        if len(self.x0) != n or len(self.q_states) != n or len(self.p0_states) != n:
            raise ValueError("x0, q_states and p0_states need one entry per state")
        if len(self.r_diag) != len(self.observed):
            raise ValueError("r_diag needs one entry per observed state")
        if not self.t_end > self.t0 or not self.dt > 0:
            raise ValueError("need t_end > t0 and dt > 0")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        seen = set()
        for p in self.parameters:
            key = self.entry(p)
            if key in seen:
                raise ValueError(f"parameter {p.name} duplicates a coefficient entry")
            seen.add(key)

    @property
    def state_names(self) -> tuple[str, ...]:
        return self.library.state_names

    @property
    def n_steps(self) -> int:
        # dt need not divide the window exactly (5.130e-3 into 150); the grid stops short
        return int(math.floor((self.t_end - self.t0) / self.dt + 1e-9))

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def entry(self, p: Parameter) -> tuple[int, int]:
        return self.library.index_of(p.term), self.state_names.index(p.equation)

    def parameter(self, name: str) -> Parameter:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    def reference_xi(self) -> np.ndarray:
        xi = np.zeros((self.library.n_terms, self.library.state_dim))
        for p in self.parameters:
            xi[self.entry(p)] = p.sign * p.reference
        return xi

    def truth_xi(self, t: float) -> np.ndarray:
        xi = np.zeros((self.library.n_terms, self.library.state_dim))
        for p in self.parameters:
            xi[self.entry(p)] = p.sign * p.truth(t)
        return xi

    @property
    def mask(self) -> AdaptivityMask:
        return AdaptivityMask.from_entries(self.library.n_terms, self.library.state_dim,
                                           [self.entry(p) for p in self.parameters if p.adaptive])

    def adaptive_parameters(self) -> list[Parameter]:
        """Adaptive parameters in the filter's coefficient-block order."""
        by_entry = {self.entry(p): p for p in self.parameters if p.adaptive}
        return [by_entry[(int(i), int(k))] for i, k in self.mask.entries()]

    @property
    def observed_indices(self) -> tuple[int, ...]:
        return tuple(self.state_names.index(s) for s in self.observed)

    @property
    def filter_config(self) -> FilterConfig:
        ada = self.adaptive_parameters()
        return FilterConfig(
            q_diag=np.array([*self.q_states, *(p.q for p in ada)]),
            r_diag=np.array(self.r_diag),
            p0_diag=np.array([*self.p0_states, *(p.p0 for p in ada)]),
            observed_indices=self.observed_indices,
            dt=self.dt,
        )

    def to_model(self, xi) -> SindyModel:
        return SindyModel(self.library, xi, self.mask)

    def parameter_values(self, xi) -> dict[str, float]:
        """Read named parameter values (``coefficient / sign``) off a coefficient matrix."""
        xi = np.asarray(xi)
        return {p.name: float(xi[self.entry(p)] / p.sign) for p in self.parameters}

    def initial_model(self, trained: SindyModel) -> SindyModel:
        """Offline model with the scenario's ``initial`` overrides applied."""
        xi = np.array(trained.xi)
        for p in self.parameters:
            if p.initial is not None:
                xi[self.entry(p)] = p.sign * p.initial
        return SindyModel(self.library, xi, self.mask)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))


# --- simulation ------------------------------------------------------------

def _integrate(library: FeatureLibrary, xi_of_t, varying, x0, t0, dt, nsteps,
               forcing_frequency=None) -> np.ndarray:
    """RK4 trajectory; ``xi_of_t`` returns the coefficient matrix at vector times."""
    exps, mono, f_idx, amps, freqs = _kernels.library_arrays(library, forcing_frequency)
    half = t0 + 0.5 * dt * np.arange(2 * nsteps + 1)
    base = xi_of_t(t0)
    var_idx = np.array(varying, dtype=np.int64).reshape(-1, 2)
    if len(var_idx):
        vals = np.column_stack([xi_of_t(half, entry=(i, k)) for i, k in var_idx])
    else:
        vals = np.zeros((2 * nsteps + 1, 0))
    states = _kernels.rk4_trajectory(np.ascontiguousarray(base), var_idx, vals, exps, mono,
                                     f_idx, amps, freqs, np.asarray(x0, dtype=float),
                                     float(t0), float(dt), int(nsteps))
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
        raise SimulationBlowUp(f"trajectory not finite at t={t0 + bad * dt:.6g}")
    return states


def _truth_field(scenario: Scenario):
    varying = [scenario.entry(p) for p in scenario.parameters
               if not isinstance(p.truth, Constant)]
    by_entry = {scenario.entry(p): p for p in scenario.parameters}

    def xi_of_t(t, entry=None):
        if entry is not None:
            p = by_entry[entry]
            return p.sign * np.asarray(p.truth(t), dtype=float)
        return scenario.truth_xi(t)

    return xi_of_t, varying


def _derivatives(library: FeatureLibrary, states, times, xi_of_t, varying) -> np.ndarray:
    theta = library.evaluate_many(states, times)
    xdot = theta @ xi_of_t(times[0])
    for i, k in varying:
        xdot[:, k] += (xi_of_t(times, entry=(i, k)) - xi_of_t(times[0])[i, k]) * theta[:, i]
    return xdot


def initial_state(scenario: Scenario) -> np.ndarray:
    """``x0``, optionally settled by integrating the truth over ``warmup`` before ``t0``."""
    x0 = np.asarray(scenario.x0, dtype=float)
    if scenario.warmup <= 0:
        return x0
    xi0 = scenario.truth_xi(scenario.t0)
    nsteps = int(round(scenario.warmup / scenario.dt))
    start = scenario.t0 - nsteps * scenario.dt
    states = _integrate(scenario.library, lambda t, entry=None: xi0, [], x0, start,
                        scenario.dt, nsteps)
    return states[-1]


def simulate_truth(scenario: Scenario) -> SnapshotSet:
    """True trajectory on the assimilation grid, with exact derivatives."""
    xi_of_t, varying = _truth_field(scenario)
    times = scenario.times()
    states = _integrate(scenario.library, xi_of_t, varying, initial_state(scenario),
                        scenario.t0, scenario.dt, scenario.n_steps)
    return SnapshotSet(times, states, _derivatives(scenario.library, states, times,
                                                   xi_of_t, varying))


def simulate_training(scenario: Scenario) -> list[SnapshotSet]:
    """Reference-parameter trajectories for the offline fit."""
    spec = scenario.training
    xi = scenario.reference_xi()
    nsteps = int(round(spec.duration / spec.dt))
    times = spec.dt * np.arange(nsteps + 1)
    lib = scenario.library
    omegas = spec.forcing_frequencies if (spec.forcing_frequencies and not lib.is_autonomous) \
        else (None,)
    out = []
    for omega in omegas:
        lib_w = lib if omega is None else lib.with_forcing(frequency=omega)
        for ic in spec.initial_conditions:
            states = _integrate(lib_w, lambda t, entry=None: xi, [], ic, 0.0, spec.dt, nsteps)
            xdot = lib_w.evaluate_many(states, times) @ xi
            out.append(SnapshotSet(times, states, xdot, library=lib_w))
    return out


def train(scenario: Scenario, data: Sequence[SnapshotSet] | None = None) -> SindyModel:
    """Offline STLSQ fit on the scenario's training set (or on ``data``)."""
    data = simulate_training(scenario) if data is None else data
    theta, xdot = compress_regression(scenario.library, data)
    return scenario.to_model(stlsq(theta, xdot, scenario.stlsq))


def noise_std(truth_channel, snr_db: float, snr_is_linear: bool = False) -> float:
    rms = float(np.sqrt(np.mean(np.square(truth_channel))))
    if snr_is_linear:
        return rms / snr_db
    return rms * 10.0 ** (-snr_db / 20.0)


def make_observations(truth: SnapshotSet, snr_db: float | None, seed: int,
                      observed_indices: Sequence[int], snr_is_linear: bool = False,
                      skip_initial: bool = True) -> ObservationSet:
    """Noisy selected channels of ``truth``.

    Noise is zero-mean Gaussian with ``std = rms(channel) * 10**(-snr_db/20)``
    per channel; ``snr_db`` of ``None`` or ``inf`` gives exact observations.
    The row at the initial time is dropped unless ``skip_initial`` is false.
    """
    if len(truth) == 0:
        raise ValueError("empty truth trajectory")
    if snr_db is not None and math.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    idx = list(observed_indices)
    start = 1 if skip_initial else 0
    clean = truth.states[start:, idx]
    if snr_db is None or math.isinf(snr_db):
        return ObservationSet(truth.times[start:], clean.copy(), tuple(idx))
    rng = np.random.default_rng(seed)
    std = np.array([noise_std(truth.states[:, k], snr_db, snr_is_linear) for k in idx])
    noisy = clean + rng.standard_normal(clean.shape) * std
    return ObservationSet(truth.times[start:], noisy, tuple(idx))


def observations_for(scenario: Scenario, truth: SnapshotSet | None = None) -> ObservationSet:
    truth = simulate_truth(scenario) if truth is None else truth
    return make_observations(truth, scenario.snr_db, scenario.seed, scenario.observed_indices,
                             scenario.snr_is_linear)


# --- frequency response ----------------------------------------------------

@dataclass(frozen=True)
class FrcResult:
    omega: np.ndarray
    amplitude: np.ndarray
    direction: str

    def rows(self):
        return [(float(w), *map(float, a)) for w, a in zip(self.omega, self.amplitude)]


def frc_sweep(model: SindyModel, omega_grid, direction: str = "increasing",
              settle_fraction: float = 0.8, duration: float = 5000.0, dt: float = 0.05,
              x0=None, displacement_indices: Sequence[int] = (0, 1)) -> FrcResult:
    """Steady-state amplitude versus forcing frequency by time integration.

    Each frequency is integrated over ``duration`` starting from the final
    state of the previous one; the response amplitude is ``max |u_k|`` over the
    last ``1 - settle_fraction`` of the run.
    """
    if direction not in ("increasing", "decreasing"):
        raise ValueError("direction must be 'increasing' or 'decreasing'")
    if not 0.0 < settle_fraction < 1.0:
        raise ValueError("settle_fraction must lie in (0, 1)")
    if model.library.is_autonomous:
        raise ValueError("frequency sweep needs a library with a forcing term")
    omega = np.asarray(omega_grid, dtype=float).ravel()
    steps = np.diff(omega)
    if direction == "increasing" and np.any(steps <= 0) or \
            direction == "decreasing" and np.any(steps >= 0):
        raise ValueError(f"omega_grid must be sorted {direction}")
    nsteps = int(round(duration / dt))
    record_from = int(math.floor(settle_fraction * nsteps))
    x = np.zeros(model.state_dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    xi = np.ascontiguousarray(model.xi)
    idx = list(displacement_indices)
    amps = np.empty((len(omega), len(idx)))
    for j, w in enumerate(omega):
        exps, mono, f_idx, a, f = _kernels.library_arrays(model.library, w)
        x, peak = _kernels.rk4_envelope(xi, exps, mono, f_idx, a, f, x, 0.0, float(dt),
                                        nsteps, record_from)
        if not np.all(np.isfinite(peak)):
            raise SimulationBlowUp(f"frequency sweep blew up at omega={w:.6g}")
        amps[j] = peak[idx]
    return FrcResult(omega, amps, direction)


def scenario_frc(scenario: Scenario, model: SindyModel, direction: str = "increasing",
                 n_points: int | None = None) -> FrcResult:
    spec = scenario.frc or FrcSpec()
    grid = spec.grid(n_points)
    if direction == "decreasing":
        grid = grid[::-1]
    return frc_sweep(model, grid, direction, spec.settle_fraction, spec.duration, spec.dt,
                     displacement_indices=spec.displacement_indices)


# --- built-in case studies -------------------------------------------------

# Reduced-order-model coefficients of the MEMS arch (parameter units).
MEMS_REFERENCE = {
    "k1": 1.000, "k2": 3.957, "mu1": 2.000e-3, "mu2": 2.000e-3,
    "a11": 7.125e-3, "a12": 1.433e-2, "b111": 5.074e-5, "b222": 1.575e-3, "forcing": 1.000,
}
MEMS_FORCING = CosineForcing(amplitude=0.0201, frequency=0.9899)


def _lotka_volterra() -> Scenario:
    lib = build_polynomial_library(2, 2)
    T = 150.0
    params = (
        Parameter("a", "x1", "x1", 1.0, Sinusoid(1.0, 0.2, T, 0.0),
                  adaptive=True, q=5e-5, p0=1e-4),
        Parameter("b", "x1 x2", "x1", -0.1, Step(-0.1, -0.09, 50.0),
                  adaptive=True, q=1e-8, p0=1e-7),
        Parameter("c", "x2", "x2", -1.5, Constant(-1.5), adaptive=True, q=1e-14, p0=1e-7),
        Parameter("d", "x1 x2", "x2", 0.075, LinearRamp(0.075, 0.085, 0.0, T),
                  adaptive=True, q=8e-8, p0=1e-7),
    )
    return Scenario(
        name="lotka_volterra", library=lib, parameters=params,
        x0=(10.0, 5.0), t0=0.0, t_end=T, dt=5.130e-3,
        training=TrainingSpec(((10.0, 5.0), (30.0, 8.0), (15.0, 20.0)), 20.0, 5.130e-3),
        stlsq=StlsqSettings(0.05, 5e-4),
        observed=("x1", "x2"), q_states=(1e-3, 1e-3), p0_states=(1e-3, 1e-3), r_diag=(1.0, 1.0),
        snr_db=25.0, seed=0,
    )


def _selkov() -> Scenario:
    lib = build_polynomial_library(2, 3)
    T = 300.0
    q_lin, q_nl = 1e-14, 1e-12
    params = (
        Parameter("rho", "1", "x1", 0.92, LinearRamp(0.9, 0.72, 0.0, T),
                  adaptive=True, q=q_lin, p0=1e-3),
        Parameter("sigma1", "x1", "x1", -0.1, adaptive=True, q=q_lin, p0=1e-3),
        Parameter("iota", "x1 x2", "x1", 0.0, adaptive=True, q=q_nl, p0=1e-3),
        Parameter("theta1", "x1 x2^2", "x1", -1.0, adaptive=True, q=q_nl, p0=1e-3),
        Parameter("sigma2", "x1", "x2", 0.1, adaptive=True, q=q_lin, p0=1e-4),
        Parameter("psi", "x2", "x2", -1.0, adaptive=True, q=q_nl, p0=1e-3),
        Parameter("theta2", "x1 x2^2", "x2", 1.0, adaptive=True, q=q_nl, p0=1e-3),
    )
    return Scenario(
        name="selkov", library=lib, parameters=params,
        x0=(1.5, 0.5), t0=0.0, t_end=T, dt=0.1,
        training=TrainingSpec(((0.14, 1.74), (0.17, 1.63), (0.04, 2.47)), 20.0, 0.05),
        stlsq=StlsqSettings(0.05, 5e-2),
        observed=("x1", "x2"), q_states=(1e-6, 1e-6), p0_states=(1e-8, 1e-8),
        r_diag=(5e-4, 5e-4), snr_db=25.0, seed=0,
    )


def _mems_parameters(truth_scale: dict[str, float], adaptive: dict[str, tuple[float, float]],
                     initial: dict[str, float]) -> tuple[Parameter, ...]:
    spec = [  # name, term, equation, sign
        ("kin1", "v1", "u1", 1.0), ("kin2", "v2", "u2", 1.0),
        ("k1", "u1", "v1", -1.0), ("mu1", "v1", "v1", -1.0), ("a12", "u1 u2", "v1", -1.0),
        ("b111", "u1^3", "v1", -1.0), ("forcing", "cos", "v1", 1.0),
        ("k2", "u2", "v2", -1.0), ("mu2", "v2", "v2", -1.0), ("a11", "u1^2", "v2", -1.0),
        ("b222", "u2^3", "v2", -1.0),
    ]
    out = []
    for name, term, eq, sign in spec:
        ref = MEMS_REFERENCE.get(name, 1.0)
        sched = Constant(ref * truth_scale[name]) if name in truth_scale else None
        q, p0 = adaptive.get(name, (0.0, 0.0))
        out.append(Parameter(name, term, eq, ref, sched, sign, name in adaptive,
                             initial.get(name), q, p0))
    return tuple(out)


def _mems_base(name, parameters, q_states, p0_states) -> Scenario:
    lib = build_polynomial_library(4, 3, MEMS_FORCING, ("u1", "u2", "v1", "v2"))
    omegas = tuple(np.round(np.linspace(0.95, 1.05, 9), 6))
    return Scenario(
        name=name, library=lib, parameters=parameters,
        x0=(0.0, 0.0, 0.0, 0.0), t0=0.0, t_end=5000.0, dt=0.05,
        training=TrainingSpec(((2.0, 2.0, 0.0, 0.0), (-2.0, 2.0, 0.0, 0.0)), 12000.0, 0.05, omegas),
        stlsq=StlsqSettings(0.05, 1e-5),
        observed=("u1", "u2", "v1", "v2"), q_states=q_states, p0_states=p0_states,
        r_diag=(1e-1, 1e-1, 1e-3, 1e-3), snr_db=None, seed=0,
        frc=FrcSpec(),
    )


def _mems_quadcubic() -> Scenario:
    scale = {k: 1.25 for k in ("a11", "a12", "b111", "b222")}
    adaptive = {"a11": (1e-7, 5e-4), "a12": (1e-12, 1e-4), "b111": (1e-14, 1e-5),
                "b222": (1e-16, 5e-3)}
    return _mems_base("mems_quadcubic", _mems_parameters(scale, adaptive, {}),
                      (1e-7, 1e-7, 1e-5, 8e-6), (1e-8,) * 4)


def _mems_discovery() -> Scenario:
    adaptive = {"a11": (1e-7, 1e-4), "a12": (1e-9, 1e-4)}
    initial = {"a11": 1e-9, "a12": 0.75 * MEMS_REFERENCE["a12"]}
    return _mems_base("mems_discovery", _mems_parameters({}, adaptive, initial),
                      (1e-8, 1e-8, 1e-5, 1e-5), (1e-7,) * 4)


BUILTIN = {
    "lotka_volterra": _lotka_volterra,
    "selkov": _selkov,
    "mems_quadcubic": _mems_quadcubic,
    "mems_discovery": _mems_discovery,
}


def builtin_scenario(name: str) -> Scenario:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(BUILTIN)}") from None
