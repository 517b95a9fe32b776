"""Continuous-time walks and adiabatic evolution on small operators.

Operators are anything ``spectral.as_operator`` accepts: a collapsed path,
a quotient operator, a small ``MultiGraph`` (optionally with its layout) or
a raw matrix.  The Hamiltonian of the walk is ``A`` itself; the adiabatic
Hamiltonian is ``H(s) = -[(1-|s|) A + |s| w P]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np
import scipy.optimize as so
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameter, NumericFailure, TunnelError
from .spectral import DENSE_CEILING, SiteOperator, as_operator, interpolated

NORM_DRIFT = 1e-6
BATCH = 512


class TooLarge(TunnelError, ValueError):
    """Dimension above the dense ceiling and no integrator requested."""


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    time: float = 0.0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probability(self, site: int) -> float:
        return float(abs(self.amplitudes[site]) ** 2)

    @classmethod
    def basis(cls, dim: int, site: int) -> "StateVector":
        amp = np.zeros(dim, dtype=complex)
        amp[site] = 1.0
        return cls(amp, 0.0)


@dataclass(frozen=True)
class Schedule:
    """s(t) = 2t/T - 1: ENTRANCE segment on [0, T/2], EXIT segment on [T/2, T]."""

    total_time: float

    def __post_init__(self):
        if not self.total_time >= 0:
            raise InvalidParameter("total time must be non-negative")

    def s(self, t):
        if self.total_time == 0:
            return np.where(np.asarray(t) > 0, 1.0, -1.0)
        return np.clip(2.0 * np.asarray(t, dtype=float) / self.total_time - 1.0, -1.0, 1.0)


def _dense(mat) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)


class _Spectral:
    """Cached eigendecomposition of a dense Hermitian operator."""

    def __init__(self, mat):
        self.w, self.v = np.linalg.eigh(_dense(mat))

    def evolve(self, start: int, times: np.ndarray) -> np.ndarray:
        # rows: times, cols: sites
        coeff = self.v[start].conj()
        phases = np.exp(-1j * np.outer(times, self.w))
        return (phases * coeff) @ self.v.T


def _resolve(op, layout=None, allow_integrator: bool = False) -> tuple[SiteOperator, bool]:
    o = as_operator(op, layout)
    n = o.matrix.shape[0]
    if n <= DENSE_CEILING:
        return o, True
    if not allow_integrator:
        raise TooLarge(f"dimension {n} exceeds {DENSE_CEILING}; pass integrator=True")
    return o, False


def ct_walk(op, start: int | None = None, t: float = 0.0, integrator: bool = False, layout=None) -> StateVector:
    """exp(-i A t)|start>; start defaults to the ENTRANCE."""
    if t < 0:
        raise InvalidParameter("t must be non-negative")
    o, dense = _resolve(op, layout, integrator)
    start = o.entrance if start is None else start
    n = o.matrix.shape[0]
    if dense:
        amp = _Spectral(o.matrix).evolve(start, np.array([t]))[0]
    else:
        psi0 = np.zeros(n, dtype=complex)
        psi0[start] = 1.0
        amp = spla.expm_multiply(-1j * sp.csr_matrix(o.matrix), psi0, start=0.0, stop=t, num=2, endpoint=True)[-1]
    out = StateVector(amp, float(t))
    if abs(out.norm - 1) > NORM_DRIFT:
        raise NumericFailure("walk lost unitarity", residual=abs(out.norm - 1))
    return out


def exit_curve(op, times: Sequence[float], start: int | None = None, layout=None) -> np.ndarray:
    """|<EXIT| exp(-i A t) |start>|^2 at each time (dense operators only)."""
    o, _ = _resolve(op, layout)
    start = o.entrance if start is None else start
    spec = _Spectral(o.matrix)
    t = np.asarray(times, dtype=float)
    out = np.empty(t.size)
    for lo in range(0, t.size, 4096):
        amps = spec.evolve(start, t[lo : lo + 4096])
        out[lo : lo + 4096] = np.abs(amps[:, o.exit]) ** 2
    return out


@dataclass(frozen=True)
class ScanResult:
    best_t: float
    best_probability: float
    times: np.ndarray
    probabilities: np.ndarray

    def __iter__(self):
        yield self.best_t
        yield self.best_probability

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "p_exit"])
        for t, p in zip(self.times, self.probabilities):
            w.writerow([repr(float(t)), repr(float(p))])


def exit_scan(
    op, T_max: float, samples: int = 2000, start: int | None = None, refine: bool = True, layout=None
) -> ScanResult:
    """Best EXIT probability over an even grid on [0, T_max].

    With ``refine`` the best grid point is polished by a bounded scalar
    search between its neighbors, so the result is never below the grid
    maximum.
    """
    if samples < 2:
        raise InvalidParameter("samples must be >= 2")
    o, _ = _resolve(op, layout)
    start = o.entrance if start is None else start
    times = np.linspace(0.0, float(T_max), samples)
    spec = _Spectral(o.matrix)
    probs = exit_curve(o, times, start)
    i = int(np.argmax(probs))
    best_t, best_p = float(times[i]), float(probs[i])
    if refine and samples > 2:
        a, b = times[max(i - 1, 0)], times[min(i + 1, samples - 1)]

        def neg(t: float) -> float:
            return -float(abs(spec.evolve(start, np.array([t]))[0, o.exit]) ** 2)

        res = so.minimize_scalar(neg, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
        if -res.fun > best_p:
            best_t, best_p = float(res.x), float(-res.fun)
    return ScanResult(best_t, best_p, times, probs)


def default_steps(total_time: float, norm_h: float) -> int:
    return max(200, int(math.ceil(20.0 * total_time * max(norm_h, 1.0))))


def adiabatic_evolve(
    op,
    schedule: Schedule,
    steps: int | None = None,
    endpoint_weight: float | None = None,
    layout=None,
    integrator: bool = False,
) -> StateVector:
    """Integrate i d|psi>/dt = H(s(t)) |psi> from the ENTRANCE.

    Each step applies the exact propagator of H frozen at the step midpoint,
    so the evolution is unitary up to rounding.  Dense operators are
    diagonalized in batches; sparse ones use ``expm_multiply`` per step.
    """
    o, dense = _resolve(op, layout, integrator)
    w = float(endpoint_weight) if endpoint_weight is not None else o.m
    if w is None:
        raise InvalidParameter("endpoint_weight not given and operator carries no m")
    n = o.matrix.shape[0]
    T = schedule.total_time
    if steps is None:
        norm_h = max(float(abs(o.matrix).sum(axis=1).max()), w)
        steps = default_steps(T, norm_h)
    if steps < 1:
        raise InvalidParameter("steps must be >= 1")
    psi = np.zeros(n, dtype=complex)
    psi[o.entrance] = 1.0
    if T == 0:
        return StateVector(psi, 0.0)
    dt = T / steps
    mids = schedule.s((np.arange(steps) + 0.5) * dt)
    if dense:
        base = _dense(o.matrix)
        for lo in range(0, steps, BATCH):
            ss = mids[lo : lo + BATCH]
            stack = (1 - np.abs(ss))[:, None, None] * base
            sites = np.where(ss <= 0, o.entrance, o.exit)
            stack[np.arange(ss.size), sites, sites] += np.abs(ss) * w
            # H = -stack, so exp(-i H dt) = exp(+i stack dt)
            vals, vecs = np.linalg.eigh(stack)
            for q in range(ss.size):
                v = vecs[q]
                psi = v @ (np.exp(1j * vals[q] * dt) * (v.conj().T @ psi))
    else:
        for s in mids:
            neg_h = sp.csr_matrix(interpolated(o, float(s), w))
            psi = spla.expm_multiply(1j * dt * neg_h, psi)
    out = StateVector(psi, float(T))
    drift = abs(out.norm - 1)
    if drift > NORM_DRIFT:
        raise NumericFailure("adiabatic integration drifted; use more steps", residual=drift)
    return out


def adiabatic_exit_probability(op, total_time: float, steps: int | None = None, endpoint_weight=None, layout=None) -> float:
    o = as_operator(op, layout)
    st = adiabatic_evolve(o, Schedule(total_time), steps, endpoint_weight)
    return st.probability(o.exit)


def doubling_search(
    op,
    target: float = 0.8,
    T0: float = 1.0,
    max_doublings: int = 20,
    endpoint_weight: float | None = None,
    layout=None,
) -> tuple[float, float, list[tuple[float, float]]]:
    """Double T from ``T0`` until the final EXIT probability reaches ``target``.

    Returns ``(T, probability, history)``; ``T`` is NaN when the target was
    never reached.
    """
    o = as_operator(op, layout)
    history = []
    T = float(T0)
    for _ in range(max_doublings + 1):
        p = adiabatic_exit_probability(o, T, endpoint_weight=endpoint_weight)
        history.append((T, p))
        if p >= target:
            return T, p, history
        T *= 2
    return math.nan, history[-1][1], history
