"""Adaptive SINDy model: coefficients, adaptivity mask and augmented Jacobian.

The coefficient matrix ``xi`` has shape ``(p, n)``: column ``k`` holds the
weights of every library term in the equation for state ``k``. A boolean mask
of the same shape marks the entries that are estimated online; the rest form
the fixed part of the model.

Adaptive entries are flattened state-major, then by term index (all masked
terms of equation 1 first, then equation 2, ...). This order is the layout of
the coefficient block of the augmented filter state, and of the matching
entries of ``q_diag`` / ``p0_diag``.

An adaptive coefficient that is exactly zero still enters the Jacobian
through ``theta_i(x)``, but any sensitivity of *other* quantities to it
vanishes; seed such entries with a tiny nonzero value instead.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .library import FeatureLibrary, library_from_descriptor


@dataclass(frozen=True)
class AdaptivityMask:
    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError("mask must be a 2-D (p, n) boolean array")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def none(cls, p: int, n: int) -> "AdaptivityMask":
        return cls(np.zeros((p, n), dtype=bool))

    @classmethod
    def from_entries(cls, p: int, n: int, entries) -> "AdaptivityMask":
        """Mask with ``True`` at each ``(term_index, state_index)`` in ``entries``."""
        m = np.zeros((p, n), dtype=bool)
        for i, k in entries:
            m[i, k] = True
        return cls(m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def entries(self) -> np.ndarray:
        """``(rho, 2)`` array of ``(term, state)`` pairs in flattening order."""
        ks, iis = np.nonzero(self.mask.T)
        return np.column_stack([iis, ks])


@dataclass(frozen=True)
class SindyModel:
    library: FeatureLibrary
    xi: np.ndarray
    mask: AdaptivityMask = None
    _terms: np.ndarray = field(init=False, repr=False, compare=False)
    _states: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        p, n = self.library.n_terms, self.library.state_dim
        if xi.shape != (p, n):
            raise ValueError(f"xi must have shape ({p}, {n}), got {xi.shape}")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        mask = self.mask
        if mask is None:
            mask = AdaptivityMask.none(p, n)
        elif not isinstance(mask, AdaptivityMask):
            mask = AdaptivityMask(mask)
        if mask.shape != (p, n):
            raise ValueError(f"mask must have shape ({p}, {n}), got {mask.shape}")
        object.__setattr__(self, "mask", mask)
        e = mask.entries()
        object.__setattr__(self, "_terms", e[:, 0].copy())
        object.__setattr__(self, "_states", e[:, 1].copy())

    @property
    def state_dim(self) -> int:
        return self.library.state_dim

    @property
    def n_adaptive(self) -> int:
        return len(self._terms)

    @property
    def augmented_dim(self) -> int:
        return self.state_dim + self.n_adaptive

    @property
    def adaptive_part(self) -> np.ndarray:
        return np.where(self.mask.mask, self.xi, 0.0)

    @property
    def fixed_part(self) -> np.ndarray:
        return np.where(self.mask.mask, 0.0, self.xi)

    def adaptive_names(self) -> list[str]:
        names = self.library.term_names()
        states = self.library.state_names
        return [f"{states[k]}:{names[i]}" for i, k in zip(self._terms, self._states)]

    def pack_adaptive(self) -> np.ndarray:
        return self.xi[self._terms, self._states].copy()

    def unpack_adaptive(self, xi_tilde) -> "SindyModel":
        return SindyModel(self.library, self.coefficients_with(xi_tilde), self.mask)

    def coefficients_with(self, xi_tilde) -> np.ndarray:
        """Full ``xi`` with the adaptive entries replaced by ``xi_tilde``."""
        xi_tilde = np.asarray(xi_tilde, dtype=float)
        if xi_tilde.shape != (self.n_adaptive,):
            raise ValueError(
                f"expected {self.n_adaptive} adaptive coefficients, got shape {xi_tilde.shape}")
        xi = self.xi.copy()
        xi[self._terms, self._states] = xi_tilde
        return xi

    def eval_f(self, x, t: float = 0.0) -> np.ndarray:
        return self.xi.T @ self.library.evaluate(x, t)

    def state_jacobian(self, x, t: float = 0.0) -> np.ndarray:
        return self.xi.T @ self.library.jacobian(x, t)

    def augmented_jacobian(self, x, t: float = 0.0, xi=None) -> np.ndarray:
        """Jacobian of ``(x, xi_tilde) -> (f, 0)``.

        ``xi`` optionally overrides the coefficient matrix (the filter passes
        the current estimate rather than building a new model every step).
        """
        xi = self.xi if xi is None else xi
        n, r = self.state_dim, self.n_adaptive
        F = np.zeros((n + r, n + r))
        F[:n, :n] = xi.T @ self.library.jacobian(x, t)
        if r:
            theta = self.library.evaluate(x, t)
            F[self._states, n + np.arange(r)] = theta[self._terms]
        return F

    def adaptive_time_dependent(self) -> bool:
        """Whether the augmented Jacobian depends on ``t`` at a fixed state."""
        forced = set(self.library.forcing_indices)
        return any(int(i) in forced for i in self._terms)

    def to_csv(self, path) -> None:
        write_coefficients_csv(path, self.library, self.xi)
        write_mask_csv(mask_path_for(path), self.library, self.mask.mask)

    @classmethod
    def from_csv(cls, path, mask_path=None) -> "SindyModel":
        library, xi = read_coefficients_csv(path)
        mask_path = Path(mask_path) if mask_path else mask_path_for(path)
        mask = read_mask_csv(mask_path, library) if mask_path.exists() else None
        return cls(library, xi, mask)


def mask_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_mask" + path.suffix)


def _table_rows(library: FeatureLibrary, values, fmt) -> str:
    buf = io.StringIO()
    buf.write(f"# library: {library.descriptor()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["equation", *library.term_names()])
    for k, s in enumerate(library.state_names):
        w.writerow([s, *(fmt(v) for v in values[:, k])])
    return buf.getvalue()


def write_coefficients_csv(path, library: FeatureLibrary, xi) -> None:
    """Write ``xi`` transposed: one row per equation, one column per term."""
    Path(path).write_text(_table_rows(library, np.asarray(xi), lambda v: f"{v:.17g}"))


def write_mask_csv(path, library: FeatureLibrary, mask) -> None:
    Path(path).write_text(_table_rows(library, np.asarray(mask), lambda v: str(int(v))))


def _read_table(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"coefficient file not found: {path}")
    descriptor = None
    rows = []
    with path.open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, rest = line[1:].partition(":")
                if key.strip() == "library":
                    descriptor = rest.strip()
                continue
            rows.append(line)
    table = list(csv.reader(rows))
    if descriptor is None:
        raise ValueError(f"{path}: missing '# library:' descriptor line")
    return library_from_descriptor(descriptor), table


def read_coefficients_csv(path):
    library, table = _read_table(path)
    header, body = table[0], table[1:]
    if header[1:] != library.term_names():
        raise ValueError(f"{path}: term header does not match library descriptor")
    if len(body) != library.state_dim:
        raise ValueError(f"{path}: expected {library.state_dim} equation rows, got {len(body)}")
    xi = np.array([[float(v) for v in row[1:]] for row in body]).T
    return library, xi


def read_mask_csv(path, library: FeatureLibrary) -> AdaptivityMask:
    lib2, table = _read_table(path)
    if lib2.term_names() != library.term_names():
        raise ValueError(f"{path}: mask library differs from coefficient library")
    m = np.array([[int(v) for v in row[1:]] for row in table[1:]], dtype=bool).T
    return AdaptivityMask(m)
