"""Closed-form limit spectrum of the perforated waveguide cell.

When the perforation period goes to zero the Floquet eigenvalues of the
cell converge to an explicit two-parameter family

    Lambda_{j,k}(eta) = (eta + 2*pi*j)**2 + (pi*k/H)**2,
    j integer, k nonnegative integer,

with mode profiles exp(i*(eta + 2*pi*j)*x1) * cos(pi*k*x2/H) on the
rectangle (-1/2, 1/2) x (0, H). This module enumerates that family:
sorted finite sections, degeneracy clusters, crossing points of distinct
branches, and the H-regimes that control how many low bands are free of
x2-dependent modes.

Everything here is exact arithmetic on closed forms; no discretization.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

#: Default relative tolerance used to group numerically equal levels.
DEFAULT_TOL_MULT = 1e-12


@dataclass(frozen=True)
class ModeLabel:
    """Branch index (j, k): lateral Floquet shift j, transverse order k >= 0."""

    j: int
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"transverse index k must be >= 0, got {self.k}")


@dataclass(frozen=True)
class FloquetPoint:
    """A Floquet parameter eta in [-pi, pi] together with the cell height H."""

    eta: float
    H: float

    def __post_init__(self):
        if not (-math.pi <= self.eta <= math.pi):
            raise ValueError(f"eta must lie in [-pi, pi], got {self.eta}")
        if not self.H > 0.0:
            raise ValueError(f"cell height H must be positive, got {self.H}")


@dataclass(frozen=True)
class LabeledLevel:
    value: float
    label: ModeLabel


@dataclass(frozen=True)
class SortedSpectrum:
    """First M levels at a Floquet point.

    levels are sorted nondecreasingly; ties are broken by (k, then j)
    so the ordering is total and reproducible. clusters groups level
    indices that coincide up to the relative tolerance used to build
    the spectrum (each cluster is a maximal run of equal values).
    """

    point: FloquetPoint
    levels: tuple[LabeledLevel, ...]
    clusters: tuple[tuple[int, ...], ...]


class HRegime(enum.Enum):
    """Height regimes ordered by how early x2-dependent branches intrude.

    A: H < 1/sqrt(8), the three lowest branches are x2-independent on
       the whole Floquet interval.
    B: 1/sqrt(8) <= H < 1/2, still true for the two lowest branches.
    C: 1/2 <= H < 1, the (0,1) branch drops below 4*pi^2 but stays
       above pi^2.
    D: H >= 1, the (0,1) branch reaches or undercuts pi^2.
    """

    A = "A"
    B = "B"
    C = "C"
    D = "D"


def lambda0(label: ModeLabel, point: FloquetPoint) -> float:
    """Limit eigenvalue of branch (j, k) at the given Floquet point."""
    xi = point.eta + TWO_PI * label.j
    return xi * xi + (math.pi * label.k / point.H) ** 2


def evaluate_mode(label: ModeLabel, point: FloquetPoint, x1, x2):
    """Limit mode exp(i*(eta+2*pi*j)*x1) * cos(pi*k*x2/H).

    Accepts scalars or numpy arrays for x1, x2 (broadcast together).
    The mode is quasi-periodic across x1 = +-1/2 with factor exp(i*eta)
    and satisfies the Neumann condition on x2 in {0, H}.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    xi = point.eta + TWO_PI * label.j
    return np.exp(1j * xi * x1) * np.cos(math.pi * label.k * x2 / point.H)


def _candidate_levels(point: FloquetPoint, jmax: int, kmax: int):
    out = []
    for j in range(-jmax, jmax + 1):
        xi = point.eta + TWO_PI * j
        base = xi * xi
        for k in range(0, kmax + 1):
            out.append((base + (math.pi * k / point.H) ** 2, k, j))
    return out


def sorted_spectrum(point: FloquetPoint, M: int, tol_mult: float = DEFAULT_TOL_MULT) -> SortedSpectrum:
    """First M limit eigenvalues at a Floquet point, with degeneracy clusters.

    The candidate index box is grown until every excluded branch provably
    exceeds the M-th smallest candidate, so the result is exact regardless
    of H. Sorting is by value with exact ties resolved by (k, then j);
    "exact" means within tol_mult relative, which also defines clusters.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    jmax, kmax = 2, 2
    while True:
        cand = _candidate_levels(point, jmax, kmax)
        cand.sort()
        mth = cand[M - 1][0]
        # smallest value any excluded index could take
        j_excl = (TWO_PI * (jmax + 1) - abs(point.eta)) ** 2
        k_excl = (math.pi * (kmax + 1) / point.H) ** 2
        grow_j = j_excl <= mth
        grow_k = k_excl <= mth
        if not grow_j and not grow_k:
            break
        if grow_j:
            jmax *= 2
        if grow_k:
            kmax *= 2

    # group into clusters of equal values, then order each cluster by (k, j)
    head = cand[: M + len(cand)]  # sorted already
    levels: list[LabeledLevel] = []
    clusters: list[tuple[int, ...]] = []
    i = 0
    while len(levels) < M:
        v0 = head[i][0]
        tol = tol_mult * max(1.0, abs(v0))
        grp = [head[i]]
        i += 1
        while i < len(head) and head[i][0] - v0 <= tol:
            grp.append(head[i])
            i += 1
        grp.sort(key=lambda t: (t[1], t[2]))
        start = len(levels)
        for val, k, j in grp:
            if len(levels) == M:
                break
            levels.append(LabeledLevel(val, ModeLabel(j, k)))
        clusters.append(tuple(range(start, len(levels))))
    return SortedSpectrum(point, tuple(levels), tuple(clusters))


def h_regime(H: float) -> HRegime:
    """Classify the cell height; boundaries belong to the later regime."""
    if not H > 0.0:
        raise ValueError(f"cell height H must be positive, got {H}")
    if H < 1.0 / math.sqrt(8.0):
        return HRegime.A
    if H < 0.5:
        return HRegime.B
    if H < 1.0:
        return HRegime.C
    return HRegime.D


@dataclass(frozen=True)
class NodePoint:
    """A crossing of two or more distinct limit branches.

    eta0 is the crossing abscissa in [-pi, pi], value the common level.
    labels lists every branch through the node; has_x2_dependent is True
    when any of them carries k > 0 (those nodes mix transverse structure
    and are excluded from the perturbation windows used downstream).
    """

    eta0: float
    value: float
    labels: tuple[ModeLabel, ...]
    has_x2_dependent: bool


def _labels_below(H: float, lambda_max: float) -> list[ModeLabel]:
    """All branches whose minimum over eta in [-pi, pi] is <= lambda_max."""
    labels = []
    jmax = int(math.ceil((math.sqrt(max(lambda_max, 0.0)) + math.pi) / TWO_PI)) + 1
    kmax = int(math.ceil(H * math.sqrt(max(lambda_max, 0.0)) / math.pi)) + 1
    for j in range(-jmax, jmax + 1):
        # min over eta of (eta + 2 pi j)^2
        if j == 0:
            jmin = 0.0
        else:
            jmin = (TWO_PI * abs(j) - math.pi) ** 2
        for k in range(0, kmax + 1):
            if jmin + (math.pi * k / H) ** 2 <= lambda_max:
                labels.append(ModeLabel(j, k))
    return labels


def find_nodes(H: float, lambda_max: float, tol: float = 1e-9) -> list[NodePoint]:
    """Crossings of distinct limit branches with crossing value <= lambda_max.

    Branches with the same j never cross (their gap (pi/H)^2*(k1^2-k2^2)
    is constant in eta), so every node solves a linear equation in eta:

        eta0 = -pi*(j1+j2) + (a2 - a1) / (4*pi*(j1-j2)),  a = (pi*k/H)^2.

    Crossings sharing abscissa and value are merged into one NodePoint;
    the labels tuple then holds the full intersection multiplicity (for
    example the triple at eta=0, value 4*pi^2 when H = 1/2).
    """
    labels = _labels_below(H, lambda_max)
    hits: list[tuple[float, float, ModeLabel, ModeLabel]] = []
    for a in range(len(labels)):
        for b in range(a + 1, len(labels)):
            l1, l2 = labels[a], labels[b]
            if l1.j == l2.j:
                continue
            a1 = (math.pi * l1.k / H) ** 2
            a2 = (math.pi * l2.k / H) ** 2
            eta0 = -math.pi * (l1.j + l2.j) + (a2 - a1) / (4.0 * math.pi * (l1.j - l2.j))
            if not (-math.pi - 1e-12 <= eta0 <= math.pi + 1e-12):
                continue
            eta0 = min(math.pi, max(-math.pi, eta0))
            val = (eta0 + TWO_PI * l1.j) ** 2 + a1
            if val <= lambda_max * (1.0 + 1e-12):
                hits.append((eta0, val, l1, l2))

    hits.sort(key=lambda t: (t[0], t[1]))
    nodes: list[NodePoint] = []
    for eta0, val, l1, l2 in hits:
        merged = False
        for i, n in enumerate(nodes):
            if abs(n.eta0 - eta0) <= tol and abs(n.value - val) <= tol * max(1.0, abs(val)):
                lab = set(n.labels) | {l1, l2}
                ordered = tuple(sorted(lab, key=lambda l: (l.k, l.j)))
                nodes[i] = NodePoint(n.eta0, n.value, ordered, any(l.k > 0 for l in ordered))
                merged = True
                break
        if not merged:
            ordered = tuple(sorted({l1, l2}, key=lambda l: (l.k, l.j)))
            nodes.append(NodePoint(eta0, val, ordered, any(l.k > 0 for l in ordered)))
    nodes.sort(key=lambda n: (n.eta0, n.value))
    return nodes


def write_spectrum_csv(path, H: float, etas: Iterable[float], M: int,
                       tol_mult: float = DEFAULT_TOL_MULT) -> None:
    """Write `eta,p,lambda0,j,k,multiplicity` rows for a grid of eta values.

    p is 1-based. multiplicity is the size of the cluster the level
    belongs to. Floats are written with repr so rewriting the same grid
    reproduces the file byte for byte.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["eta", "p", "lambda0", "j", "k", "multiplicity"])
        for eta in etas:
            spec = sorted_spectrum(FloquetPoint(float(eta), H), M, tol_mult)
            mult = {}
            for cl in spec.clusters:
                for i in cl:
                    mult[i] = len(cl)
            for p, lv in enumerate(spec.levels, start=1):
                w.writerow([repr(float(eta)), p, repr(lv.value), lv.label.j, lv.label.k, mult[p - 1]])
