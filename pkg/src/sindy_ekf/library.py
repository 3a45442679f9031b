"""Candidate-function libraries for sparse regression of vector fields.

A library is an ordered list of terms (monomials in the state, plus an
optional time-explicit cosine forcing). Terms are enumerated in graded
lexicographic order with the constant first, so that coefficient matrices
built on the same ``(state_dim, max_degree, forcing)`` always line up.
"""
from __future__ import annotations

import itertools
import math
import shlex
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Monomial:
    exponents: tuple[int, ...]

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def name(self, state_names: Sequence[str]) -> str:
        if self.degree == 0:
            return "1"
        parts = []
        for s, e in zip(state_names, self.exponents):
            if e == 1:
                parts.append(s)
            elif e > 1:
                parts.append(f"{s}^{e}")
        return " ".join(parts)


@dataclass(frozen=True)
class CosineForcing:
    """``amplitude * cos(frequency * time_scale * t)``; no state dependence."""

    amplitude: float
    frequency: float
    time_scale: float = 1.0

    def __call__(self, t: float) -> float:
        return self.amplitude * math.cos(self.frequency * self.time_scale * t)

    def name(self, state_names: Sequence[str] = ()) -> str:
        return f"{self.amplitude!r}*cos({self.frequency!r}*t)"


FeatureTerm = Union[Monomial, CosineForcing]


def _graded_lex(state_dim: int, max_degree: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(max_degree + 1):
        # combinations_with_replacement yields x1 x1, x1 x2, ... in lex order
        for combo in itertools.combinations_with_replacement(range(state_dim), deg):
            exps = [0] * state_dim
            for k in combo:
                exps[k] += 1
            out.append(tuple(exps))
    return out


@dataclass(frozen=True)
class FeatureLibrary:
    """Ordered candidate functions ``theta_1 .. theta_p`` over an ``n``-state.

    Use :func:`build_polynomial_library` rather than constructing directly.
    """

    state_dim: int
    terms: tuple[FeatureTerm, ...]
    max_degree: int = 0
    state_names: tuple[str, ...] = ()
    _exps: np.ndarray = field(init=False, repr=False, compare=False)
    _dexps: np.ndarray = field(init=False, repr=False, compare=False)
    _dcoef: np.ndarray = field(init=False, repr=False, compare=False)
    _mono_idx: np.ndarray = field(init=False, repr=False, compare=False)
    _forcing_idx: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        if len(self.terms) < 1:
            raise ValueError("library needs at least one term")
        if not self.state_names:
            object.__setattr__(self, "state_names",
                               tuple(f"x{k + 1}" for k in range(self.state_dim)))
        elif len(self.state_names) != self.state_dim:
            raise ValueError("state_names length must equal state_dim")
        mono_idx, exps, forcing = [], [], []
        for i, term in enumerate(self.terms):
            if isinstance(term, Monomial):
                if len(term.exponents) != self.state_dim or min(term.exponents) < 0:
                    raise ValueError(f"bad monomial exponents {term.exponents}")
                mono_idx.append(i)
                exps.append(term.exponents)
            elif isinstance(term, CosineForcing):
                forcing.append(i)
            else:
                raise TypeError(f"unknown term {term!r}")
        exps = np.array(exps, dtype=np.int64).reshape(len(mono_idx), self.state_dim)
        n = self.state_dim
        # d theta / d x_k = e_k * x^(e - unit_k); clip keeps the gather valid where e_k = 0
        dexps = np.repeat(exps[None, :, :], n, axis=0)
        dcoef = np.zeros((n, len(mono_idx)))
        for k in range(n):
            dcoef[k] = exps[:, k]
            dexps[k, :, k] = np.maximum(exps[:, k] - 1, 0)
        object.__setattr__(self, "_exps", exps)
        object.__setattr__(self, "_dexps", dexps)
        object.__setattr__(self, "_dcoef", dcoef)
        object.__setattr__(self, "_mono_idx", np.array(mono_idx, dtype=np.int64))
        object.__setattr__(self, "_forcing_idx", tuple(forcing))

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def forcing_indices(self) -> tuple[int, ...]:
        return self._forcing_idx

    @property
    def is_autonomous(self) -> bool:
        return not self._forcing_idx

    @property
    def monomial_exponents(self) -> np.ndarray:
        """``(p_mono, n)`` exponent array of the monomial terms."""
        return self._exps

    @property
    def monomial_indices(self) -> np.ndarray:
        return self._mono_idx

    def term_names(self) -> list[str]:
        return [t.name(self.state_names) for t in self.terms]

    def index_of(self, name: str) -> int:
        names = self.term_names()
        if name == "cos" and self._forcing_idx:
            return self._forcing_idx[0]
        canon = " ".join(name.split())
        try:
            return names.index(canon)
        except ValueError:
            raise KeyError(f"no library term named {name!r}") from None

    def _powers(self, x: np.ndarray) -> np.ndarray:
        deg = max(self.max_degree, int(self._exps.max(initial=0)))
        return x[None, :] ** np.arange(deg + 1)[:, None]

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.state_dim,):
            raise ValueError(f"expected state of shape ({self.state_dim},), got {x.shape}")
        return x

    def evaluate(self, x, t: float = 0.0) -> np.ndarray:
        x = self._check(x)
        out = np.empty(self.n_terms)
        pw = self._powers(x)
        cols = np.arange(self.state_dim)
        out[self._mono_idx] = np.prod(pw[self._exps, cols], axis=1)
        for i in self._forcing_idx:
            out[i] = self.terms[i](t)
        return out

    def jacobian(self, x, t: float = 0.0) -> np.ndarray:
        """Analytic ``(p, n)`` matrix of ``d theta_i / d x_k``."""
        x = self._check(x)
        out = np.zeros((self.n_terms, self.state_dim))
        pw = self._powers(x)
        cols = np.arange(self.state_dim)
        dmono = self._dcoef * np.prod(pw[self._dexps, cols], axis=2)
        out[self._mono_idx] = dmono.T
        return out

    def evaluate_many(self, states, times=None) -> np.ndarray:
        """Row-wise :meth:`evaluate` for a ``(T, n)`` state matrix."""
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[1] != self.state_dim:
            raise ValueError(
                f"expected states of shape (T, {self.state_dim}), got {states.shape}")
        T = states.shape[0]
        if times is None:
            times = np.zeros(T)
        times = np.asarray(times, dtype=float)
        if times.shape != (T,):
            raise ValueError("times must have one entry per state row")
        out = np.empty((T, self.n_terms))
        deg = max(self.max_degree, int(self._exps.max(initial=0)))
        pw = states[:, None, :] ** np.arange(deg + 1)[None, :, None]
        cols = np.arange(self.state_dim)
        out[:, self._mono_idx] = np.prod(pw[:, self._exps, cols], axis=2)
        for i in self._forcing_idx:
            f = self.terms[i]
            out[:, i] = f.amplitude * np.cos(f.frequency * f.time_scale * times)
        return out

    def with_forcing(self, amplitude: float | None = None,
                     frequency: float | None = None) -> "FeatureLibrary":
        """Copy with the forcing term's amplitude and/or frequency replaced."""
        if not self._forcing_idx:
            raise ValueError("library has no forcing term")
        terms = list(self.terms)
        for i in self._forcing_idx:
            f = terms[i]
            terms[i] = replace(
                f,
                amplitude=f.amplitude if amplitude is None else float(amplitude),
                frequency=f.frequency if frequency is None else float(frequency),
            )
        return FeatureLibrary(self.state_dim, tuple(terms), self.max_degree, self.state_names)

    @property
    def forcing(self) -> CosineForcing | None:
        return self.terms[self._forcing_idx[0]] if self._forcing_idx else None

    def descriptor(self) -> str:
        """Plain-text descriptor, inverse of :func:`library_from_descriptor`."""
        parts = [f"state_dim={self.state_dim}", f"max_degree={self.max_degree}"]
        if self.state_names != tuple(f"x{k + 1}" for k in range(self.state_dim)):
            parts.append("states=" + ",".join(self.state_names))
        f = self.forcing
        if f is not None:
            parts.append(f"forcing_amplitude={f.amplitude!r}")
            parts.append(f"forcing_frequency={f.frequency!r}")
            if f.time_scale != 1.0:
                parts.append(f"forcing_time_scale={f.time_scale!r}")
        return " ".join(parts)


def build_polynomial_library(state_dim: int, max_degree: int,
                             include_forcing: CosineForcing | None = None,
                             state_names: Sequence[str] | None = None) -> FeatureLibrary:
    """All monomials of total degree <= ``max_degree``, then the forcing term.

    >>> lib = build_polynomial_library(2, 2)
    >>> lib.term_names()
    ['1', 'x1', 'x2', 'x1^2', 'x1 x2', 'x2^2']
    """
    if state_dim < 1:
        raise ValueError("state_dim must be >= 1")
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    terms: list[FeatureTerm] = [Monomial(e) for e in _graded_lex(state_dim, max_degree)]
    if include_forcing is not None:
        terms.append(include_forcing)
    return FeatureLibrary(state_dim, tuple(terms), max_degree,
                          tuple(state_names) if state_names else ())


def library_from_descriptor(text: str) -> FeatureLibrary:
    fields_ = dict(tok.split("=", 1) for tok in shlex.split(text))
    try:
        n = int(fields_["state_dim"])
        deg = int(fields_["max_degree"])
    except KeyError as exc:
        raise ValueError(f"library descriptor missing {exc}") from None
    names = fields_["states"].split(",") if "states" in fields_ else None
    forcing = None
    if "forcing_amplitude" in fields_ or "forcing_frequency" in fields_:
        forcing = CosineForcing(float(fields_.get("forcing_amplitude", 1.0)),
                                float(fields_.get("forcing_frequency", 1.0)),
                                float(fields_.get("forcing_time_scale", 1.0)))
    return build_polynomial_library(n, deg, forcing, names)

