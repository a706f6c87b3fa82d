"""Polynomial basis matrices for 2D trajectories over a fixed horizon.

A trajectory is stored as stacked coefficients ``xi = [cx; cy]`` of a
polynomial basis in normalized time ``s = t / horizon``.  Two families are
available: plain monomials ``s**k`` and Bernstein polynomials
``C(n, k) s**k (1 - s)**(n - k)``.  Both span the same space; the Bernstein
family is far better conditioned, which matters for the projection solver.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

FAMILIES = ("monomial", "bernstein")


class BasisDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class BasisSet:
    horizon_s: float
    m: int
    degree: int
    W: np.ndarray
    Wd: np.ndarray
    Wdd: np.ndarray
    times: np.ndarray
    family: str = "monomial"

    @property
    def n_c(self) -> int:
        return self.degree + 1

    @property
    def n_xi(self) -> int:
        return 2 * self.n_c


@dataclass(frozen=True)
class SampledTrajectory:
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _monomial_rows(s: np.ndarray, degree: int, horizon: float):
    k = np.arange(degree + 1)
    W = s[:, None] ** k[None, :]
    # k=0 (and k<=1 for the second derivative) columns stay zero
    Wd = np.zeros_like(W)
    Wd[:, 1:] = k[1:] * s[:, None] ** (k[1:] - 1) / horizon
    Wdd = np.zeros_like(W)
    Wdd[:, 2:] = k[2:] * (k[2:] - 1) * s[:, None] ** (k[2:] - 2) / horizon**2
    return W, Wd, Wdd


def _bernstein(s: np.ndarray, n: int) -> np.ndarray:
    """Bernstein polynomials of degree ``n``; columns ``k < 0`` or ``k > n`` are implicit zeros."""
    k = np.arange(n + 1)
    binom = np.array([comb(n, j) for j in k], dtype=float)
    return binom * s[:, None] ** k * (1.0 - s[:, None]) ** (n - k)


def _bernstein_rows(s: np.ndarray, degree: int, horizon: float):
    n = degree
    W = _bernstein(s, n)
    Bn1 = _bernstein(s, n - 1)
    Bn2 = _bernstein(s, n - 2)
    Wd = np.zeros_like(W)
    Wd[:, 1:] += Bn1
    Wd[:, :-1] -= Bn1
    Wd *= n / horizon
    Wdd = np.zeros_like(W)
    Wdd[:, 2:] += Bn2
    Wdd[:, 1:-1] -= 2 * Bn2
    Wdd[:, :-2] += Bn2
    Wdd *= n * (n - 1) / horizon**2
    return W, Wd, Wdd


@lru_cache(maxsize=32)
def build_basis(horizon_s: float = 5.0, m: int = 50, degree: int = 10, family: str = "monomial") -> BasisSet:
    """Sample a polynomial basis and its first two time derivatives at ``m`` instants.

    ``W[i, k]`` is the k-th basis function at ``times[i]``; ``Wd`` and ``Wdd``
    carry the ``1/horizon`` chain-rule factors so they map coefficients to
    m/s and m/s^2.  Results are cached and returned read-only.
    """
    if not horizon_s > 0:
        raise BasisDimensionError(f"horizon must be positive, got {horizon_s}")
    if degree < 4:
        raise BasisDimensionError(f"degree must be >= 4 for boundary conditions, got {degree}")
    if m < degree + 1:
        raise BasisDimensionError(f"need m >= degree + 1 samples, got m={m}, degree={degree}")
    if family not in FAMILIES:
        raise ValueError(f"unknown basis family {family!r}")

    times = np.linspace(0.0, horizon_s, m)
    s = times / horizon_s
    rows = _monomial_rows if family == "monomial" else _bernstein_rows
    W, Wd, Wdd = rows(s, degree, horizon_s)
    return BasisSet(
        horizon_s=float(horizon_s),
        m=int(m),
        degree=int(degree),
        W=_readonly(W),
        Wd=_readonly(Wd),
        Wdd=_readonly(Wdd),
        times=_readonly(times),
        family=family,
    )


def basis_row(basis: BasisSet, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Basis values and derivatives at a single time ``t`` (may lie past the horizon)."""
    s = np.array([t / basis.horizon_s])
    rows = _monomial_rows if basis.family == "monomial" else _bernstein_rows
    W, Wd, Wdd = rows(s, basis.degree, basis.horizon_s)
    return W[0], Wd[0], Wdd[0]


def split_xi(xi: np.ndarray, basis: BasisSet) -> tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != basis.n_xi:
        raise BasisDimensionError(f"xi has length {xi.shape[-1]}, expected {basis.n_xi}")
    return xi[..., : basis.n_c], xi[..., basis.n_c :]


def eval_trajectory(xi: np.ndarray, basis: BasisSet) -> SampledTrajectory:
    """Sampled position, velocity, acceleration; a leading batch axis is kept."""
    cx, cy = split_xi(np.asarray(xi, dtype=float), basis)
    pos = np.stack([cx @ basis.W.T, cy @ basis.W.T], axis=-1)
    vel = np.stack([cx @ basis.Wd.T, cy @ basis.Wd.T], axis=-1)
    acc = np.stack([cx @ basis.Wdd.T, cy @ basis.Wdd.T], axis=-1)
    return SampledTrajectory(pos=pos, vel=vel, acc=acc)


def smoothness_cost(xi: np.ndarray, basis: BasisSet) -> float:
    """Sum over samples of squared acceleration magnitude (unweighted)."""
    acc = eval_trajectory(xi, basis).acc
    return float(np.sum(acc**2))


def eval_at(xi: np.ndarray, basis: BasisSet, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, velocity and acceleration at time ``t``."""
    cx, cy = split_xi(xi, basis)
    w, wd, wdd = basis_row(basis, t)
    return np.array([w @ cx, w @ cy]), np.array([wd @ cx, wd @ cy]), np.array([wdd @ cx, wdd @ cy])
