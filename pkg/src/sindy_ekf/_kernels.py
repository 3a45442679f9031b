"""Compiled fixed-step RK4 loops for polynomial-plus-forcing vector fields.

These back the long deterministic integrations (truth trajectories, training
sets, frequency sweeps). The filter itself stays in NumPy.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .library import FeatureLibrary


def library_arrays(library: FeatureLibrary, forcing_frequency: float | None = None):
    """Flatten a library into the plain arrays the kernels consume."""
    f_idx = np.array(library.forcing_indices, dtype=np.int64)
    amps = np.array([library.terms[i].amplitude for i in f_idx], dtype=float)
    freqs = np.array([
        (library.terms[i].frequency if forcing_frequency is None else forcing_frequency)
        * library.terms[i].time_scale
        for i in f_idx], dtype=float)
    return (np.ascontiguousarray(library.monomial_exponents), library.monomial_indices.copy(),
            f_idx, amps, freqs)


@njit(cache=True)
def _rhs(x, t, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, out):
    n = x.shape[0]
    for j in range(exps.shape[0]):
        v = 1.0
        for k in range(n):
            for _ in range(exps[j, k]):
                v *= x[k]
        theta[mono_idx[j]] = v
    for j in range(f_idx.shape[0]):
        theta[f_idx[j]] = f_amp[j] * math.cos(f_freq[j] * t)
    for k in range(n):
        s = 0.0
        for i in range(theta.shape[0]):
            s += xi[i, k] * theta[i]
        out[k] = s


@njit(cache=True)
def _set_varying(xi, var_idx, var_vals, row):
    for m in range(var_idx.shape[0]):
        xi[var_idx[m, 0], var_idx[m, 1]] = var_vals[row, m]


@njit(cache=True)
def rk4_trajectory(xi_base, var_idx, var_vals, exps, mono_idx, f_idx, f_amp, f_freq,
                   x0, t0, dt, nsteps):
    """RK4 states on ``t0 + j*dt``; ``var_vals`` rows sit on the half-step grid.

    Row ``2j`` of ``var_vals`` holds the time-varying coefficients at
    ``t0 + j*dt``, row ``2j+1`` at ``t0 + (j+1/2)*dt``.
    """
    n = x0.shape[0]
    p = xi_base.shape[0]
    xi = xi_base.copy()
    theta = np.empty(p)
    out = np.empty((nsteps + 1, n))
    x = x0.copy()
    out[0] = x
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for j in range(nsteps):
        t = t0 + j * dt
        _set_varying(xi, var_idx, var_vals, 2 * j)
        _rhs(x, t, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, k1)
        _set_varying(xi, var_idx, var_vals, 2 * j + 1)
        for k in range(n):
            tmp[k] = x[k] + 0.5 * dt * k1[k]
        _rhs(tmp, t + 0.5 * dt, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, k2)
        for k in range(n):
            tmp[k] = x[k] + 0.5 * dt * k2[k]
        _rhs(tmp, t + 0.5 * dt, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, k3)
        _set_varying(xi, var_idx, var_vals, 2 * j + 2)
        for k in range(n):
            tmp[k] = x[k] + dt * k3[k]
        _rhs(tmp, t + dt, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, k4)
        for k in range(n):
            x[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        out[j + 1] = x
    return out


@njit(cache=True)
def rk4_envelope(xi, exps, mono_idx, f_idx, f_amp, f_freq, x0, t0, dt, nsteps, record_from):
    """Integrate ``nsteps`` RK4 steps; return final state and ``max |x_k|`` from step ``record_from``.

    The second return value is NaN-filled if the trajectory stops being finite.
    """
    n = x0.shape[0]
    theta = np.empty(xi.shape[0])
    x = x0.copy()
    peak = np.zeros(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for j in range(nsteps):
        t = t0 + j * dt
        _rhs(x, t, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, k1)
        for k in range(n):
            tmp[k] = x[k] + 0.5 * dt * k1[k]
        _rhs(tmp, t + 0.5 * dt, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, k2)
        for k in range(n):
            tmp[k] = x[k] + 0.5 * dt * k2[k]
        _rhs(tmp, t + 0.5 * dt, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, k3)
        for k in range(n):
            tmp[k] = x[k] + dt * k3[k]
        _rhs(tmp, t + dt, xi, exps, mono_idx, f_idx, f_amp, f_freq, theta, k4)
        for k in range(n):
            x[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        if not np.all(np.isfinite(x)):
            peak[:] = np.nan
            return x, peak
        if j + 1 >= record_from:
            for k in range(n):
                a = abs(x[k])
                if a > peak[k]:
                    peak[k] = a
    return x, peak
