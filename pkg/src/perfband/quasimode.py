"""Quasimodes for the perforated cell built from limit modes and the
boundary layer.

For a branch with no transverse dependence the limit mode is the plane
wave exp(i xi x1), xi = eta + 2 pi j. The approximate eigenfunction
keeps the plane wave away from the hole column, replaces it by its
linearization 1 + i xi x1 across the column, and attaches the boundary
layer there:

    U = S(x1) exp(i xi x1) + (1 - S(x1)) (1 + i xi x1)
        + eps * i xi * chi(x1) * W(x / eps),

where the switch S vanishes for |x1| < R eps and equals 1 beyond
2 R eps, and chi is a macroscopic cutoff, 1 for |x1| <= 1/6 and 0 from
|x1| = 1/3 on. With this gluing the Neumann data on every hole
boundary cancels exactly, the lateral quasi-periodicity holds up to
rounding, and the defect concentrates in the transition regions,
giving a residual of order eps.

The residual is measured against the bounded operator
B = (K + M)^{-1} M: with mu_as = 1/(1 + xi^2),

    delta = || B q - mu_as q ||_{K+M} / || q ||_{K+M},

and the spectral theorem then guarantees an eigenvalue 1/(1 + Lambda_p)
of the discrete pencil within delta of mu_as, which is checked
verbatim against the computed spectrum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fem
from .cell import CellSolution
from .dispersion import ModeLabel
from .fem import HermitianPair
from .geometry import Mesh, PerforatedCell


def smoothstep(u):
    """Quintic ramp: 0 below 0, 1 above 1, C^2 across the ends."""
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (u * (6.0 * u - 15.0) + 10.0)


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoff geometry for the quasimode gluing.

    R is the hole clearance radius in strip units; the plane-wave
    switch ramps over [R, 2R] in the stretched variable x1/eps. chi_on
    and chi_off bound the macroscopic layer cutoff.
    """

    R: float
    chi_on: float = 1.0 / 6.0
    chi_off: float = 1.0 / 3.0

    def ramp_up(self, t):
        """0 for t < R, 1 for t > 2R, smooth in between."""
        return smoothstep((np.asarray(t, dtype=float) - self.R) / self.R)

    def plane_wave_weight(self, x1, eps: float):
        """1 away from the hole column, 0 on it (switch at |x1| ~ R eps)."""
        t = np.abs(np.asarray(x1, dtype=float)) / eps
        return self.ramp_up(t)

    def layer_cutoff(self, x1):
        """1 for |x1| <= chi_on, 0 for |x1| >= chi_off."""
        u = (np.abs(np.asarray(x1, dtype=float)) - self.chi_on) \
            / (self.chi_off - self.chi_on)
        return 1.0 - smoothstep(u)


@dataclass
class Quasimode:
    """Approximate eigenfunction as a complex nodal field on the mesh."""

    field: np.ndarray
    label: ModeLabel
    eta: float
    epsilon: float
    lam0: float
    mu_as: float
    height: float

    @property
    def xi(self) -> float:
        return self.eta + 2.0 * math.pi * self.label.j


def build_quasimode(label: ModeLabel, eta: float, cell: PerforatedCell,
                    sol: Optional[CellSolution], mesh: Mesh,
                    cutoffs: Optional[CutoffSpec] = None) -> Quasimode:
    """Nodal quasimode for a transversally constant branch (label.k = 0)."""
    if label.k != 0:
        raise ValueError("quasimodes exist only for labels with k = 0")
    eps = cell.epsilon
    xi = eta + 2.0 * math.pi * label.j
    x1 = mesh.vertices[:, 0]
    x2 = mesh.vertices[:, 1]
    if cell.hole is None:
        field = np.exp(1j * xi * x1)
    else:
        if sol is None or sol.hole is None:
            raise ValueError("perforated cell needs a boundary layer solution")
        if cutoffs is None:
            cutoffs = CutoffSpec(R=sol.R)
        if 2.0 * cutoffs.R * eps >= cutoffs.chi_on:
            raise ValueError("plane-wave switch must finish before the "
                             "layer cutoff starts")
        S = cutoffs.plane_wave_weight(x1, eps)
        field = S * np.exp(1j * xi * x1) + (1.0 - S) * (1.0 + 1j * xi * x1)
        chi = cutoffs.layer_cutoff(x1)
        active = chi > 0.0
        if np.any(active):
            Wv = sol.evaluate(x1[active] / eps, x2[active] / eps)
            field[active] += eps * 1j * xi * chi[active] * Wv
    lam0 = xi * xi
    return Quasimode(field=field, label=label, eta=eta, epsilon=eps,
                     lam0=lam0, mu_as=1.0 / (1.0 + lam0),
                     height=float(np.max(x2)))


def _reduced(q: Quasimode, pair: HermitianPair) -> np.ndarray:
    return pair.dof.restrict(q.field)


def residual(q: Quasimode, pair: HermitianPair, opinv=None) -> float:
    """delta = ||B v - mu_as v||_{K+M} / ||v||_{K+M} on reduced dofs."""
    if opinv is None:
        opinv = fem.make_shift_invert(pair)
    v = _reduced(q, pair)
    w = opinv @ (pair.M @ v)
    g = w - q.mu_as * v
    return fem.h1_norm(pair, g) / fem.h1_norm(pair, v)


def nearest_level_gap(eig: fem.EigResult, q: Quasimode) -> float:
    """min_p |1/(1 + Lambda_p) - mu_as| over the computed eigenvalues."""
    mu = 1.0 / (1.0 + eig.values)
    return float(np.min(np.abs(mu - q.mu_as)))


def spectral_inclusion_holds(eig: fem.EigResult, q: Quasimode,
                             delta: float) -> bool:
    """A residual delta certifies an eigenvalue within delta of mu_as;
    verify on the computed part of the spectrum."""
    return nearest_level_gap(eig, q) <= delta


def almost_orthogonality(q1: Quasimode, q2: Quasimode,
                         pair: HermitianPair) -> float:
    """|<v1, v2>_{K+M}| with both fields normalized in the same norm."""
    if q1.label == q2.label:
        raise ValueError("almost-orthogonality needs two distinct labels")
    v1 = _reduced(q1, pair)
    v2 = _reduced(q2, pair)
    num = abs(fem.h1_product(pair, v1, v2))
    return num / (fem.h1_norm(pair, v1) * fem.h1_norm(pair, v2))


def norm_check(q: Quasimode, pair: HermitianPair) -> float:
    """||v||^2_{K+M} / ((1 + Lambda0) H); tends to 1 as eps -> 0."""
    v = _reduced(q, pair)
    nsq = fem.h1_product(pair, v, v).real
    return nsq / ((1.0 + q.lam0) * q.height)


def write_quasimode_csv(path, rows) -> None:
    """rows: (epsilon, eta, sign, j, delta, norm_ratio, ortho_max)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epsilon", "eta", "sign", "j", "delta", "norm_ratio",
                    "ortho_max"])
        for eps, eta, sign, j, delta, ratio, ortho in rows:
            w.writerow([repr(float(eps)), repr(float(eta)), int(sign), int(j),
                        repr(float(delta)), repr(float(ratio)),
                        repr(float(ortho))])
