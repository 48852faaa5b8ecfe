"""Quasimode construction, residuals, and almost-orthogonality."""

import copy
import math

import numpy as np
import pytest

from perfband import cell, fem, geometry, quasimode
from perfband.dispersion import ModeLabel


H = 0.3


@pytest.fixture(scope="module")
def layer():
    return cell.solve_cell_problem(geometry.canonical_hole(H), H=H, h=0.01)


@pytest.fixture(scope="module")
def setup8(layer):
    c = geometry.canonical_cell(H=H, N=8)
    mesh = geometry.build_perforated_mesh(c, h=0.02)
    Kf, Mf = fem.assemble_full(mesh)
    return c, mesh, Kf, Mf


@pytest.fixture(scope="module")
def setup16(layer):
    c = geometry.canonical_cell(H=H, N=16)
    mesh = geometry.build_perforated_mesh(c, h=0.02)
    Kf, Mf = fem.assemble_full(mesh)
    return c, mesh, Kf, Mf


def test_smoothstep_shape():
    assert quasimode.smoothstep(0.0) == 0.0
    assert quasimode.smoothstep(1.0) == 1.0
    assert quasimode.smoothstep(0.5) == 0.5
    u = np.linspace(0, 1, 200)
    s = quasimode.smoothstep(u)
    assert np.all(np.diff(s) >= 0)
    # flat ends: derivative vanishes at both endpoints
    assert abs(quasimode.smoothstep(1e-4)) < 1e-10
    assert abs(1.0 - quasimode.smoothstep(1.0 - 1e-4)) < 1e-10


def test_cutoff_supports():
    spec = quasimode.CutoffSpec(R=0.08)
    eps = 0.125
    x = np.array([0.0, 0.5 * 0.08 * eps, 0.08 * eps, 2 * 0.08 * eps, 0.1, -0.1])
    w = spec.plane_wave_weight(x, eps)
    assert w[0] == 0 and w[1] == 0 and w[2] == 0
    assert w[3] == 1 and w[4] == 1 and w[5] == 1
    chi = spec.layer_cutoff(np.array([0.0, 1 / 6, 0.25, 1 / 3, 0.4, -0.4]))
    assert chi[0] == 1 and chi[1] == 1
    assert 0 < chi[2] < 1
    assert chi[3] == 0 and chi[4] == 0 and chi[5] == 0


def test_k_nonzero_rejected(setup8, layer):
    c, mesh, _, _ = setup8
    with pytest.raises(ValueError):
        quasimode.build_quasimode(ModeLabel(j=0, k=1), 0.0, c, layer, mesh)


def test_missing_layer_rejected(setup8):
    c, mesh, _, _ = setup8
    with pytest.raises(ValueError):
        quasimode.build_quasimode(ModeLabel(j=1, k=0), 0.5, c, None, mesh)


def test_same_label_orthogonality_rejected(setup8, layer):
    c, mesh, Kf, Mf = setup8
    pair = fem.reduce_pair(Kf, Mf, mesh, 0.5)
    q = quasimode.build_quasimode(ModeLabel(j=1, k=0), 0.5, c, layer, mesh)
    with pytest.raises(ValueError):
        quasimode.almost_orthogonality(q, q, pair)


def test_empty_hole_field_is_exact_mode():
    c = geometry.PerforatedCell(H=H, N=8, hole=None)
    mesh = geometry.build_perforated_mesh(c, h=0.04)
    q = quasimode.build_quasimode(ModeLabel(j=1, k=0), 0.5, c, None, mesh)
    xi = 0.5 + 2 * math.pi
    assert np.allclose(q.field, np.exp(1j * xi * mesh.vertices[:, 0]),
                       atol=0, rtol=0)
    # residual is pure discretization and shrinks with h
    d = []
    for h in (0.04, 0.02):
        m = geometry.build_perforated_mesh(c, h=h)
        p = fem.assemble(m, 0.5)
        qq = quasimode.build_quasimode(ModeLabel(j=1, k=0), 0.5, c, None, m)
        d.append(quasimode.residual(qq, p))
    assert d[0] < 1e-3 and d[1] < 0.7 * d[0]


def test_constant_mode_untouched(setup8, layer):
    c, mesh, Kf, Mf = setup8
    q = quasimode.build_quasimode(ModeLabel(j=0, k=0), 0.0, c, layer, mesh)
    assert np.all(q.field == 1.0 + 0.0j)
    pair = fem.reduce_pair(Kf, Mf, mesh, 0.0)
    assert quasimode.residual(q, pair) < 1e-10


def test_quasi_periodic_jump(setup8, layer):
    c, mesh, Kf, Mf = setup8
    eta = 0.5
    pair = fem.reduce_pair(Kf, Mf, mesh, eta)
    q = quasimode.build_quasimode(ModeLabel(j=1, k=0), eta, c, layer, mesh)
    dm = pair.dof
    jump = np.abs(q.field[dm.slave]
                  - np.exp(1j * eta) * q.field[dm.slave_master]).max()
    assert jump < 1e-12


def test_residual_halves_with_eps(setup8, setup16, layer):
    c8, mesh8, K8, M8 = setup8
    c16, mesh16, K16, M16 = setup16
    eta = 0.5
    d = []
    for c, mesh, Kf, Mf in ((c8, mesh8, K8, M8), (c16, mesh16, K16, M16)):
        pair = fem.reduce_pair(Kf, Mf, mesh, eta)
        q = quasimode.build_quasimode(ModeLabel(j=1, k=0), eta, c, layer, mesh)
        d.append(quasimode.residual(q, pair))
    ratio = d[0] / d[1]
    assert 1.4 <= ratio <= 2.6, (d, ratio)


def test_residual_uniform_linear_bound(setup8, setup16, layer):
    # one constant c fitted on the coarse eps works for the finer one
    etas = (-math.pi, -math.pi / 2, 0.0, math.pi / 2, math.pi)
    cases = []
    for c, mesh, Kf, Mf in (setup8, setup16):
        worst = 0.0
        for eta in etas:
            pair = fem.reduce_pair(Kf, Mf, mesh, eta)
            opinv = fem.make_shift_invert(pair)
            for j in (0, 1, -1):
                q = quasimode.build_quasimode(ModeLabel(j=j, k=0), eta, c,
                                              layer, mesh)
                worst = max(worst, quasimode.residual(q, pair, opinv))
        cases.append((c.epsilon, worst))
    c_fit = cases[0][1] / cases[0][0]
    assert cases[1][1] <= 1.1 * c_fit * cases[1][0]


def test_spectral_inclusion(setup8, layer):
    c, mesh, Kf, Mf = setup8
    for eta in (-math.pi, 0.7, math.pi / 2):
        pair = fem.reduce_pair(Kf, Mf, mesh, eta)
        opinv = fem.make_shift_invert(pair)
        eig = fem.solve_lowest(pair, 8, opinv=opinv)
        for j in (0, 1, -1):
            q = quasimode.build_quasimode(ModeLabel(j=j, k=0), eta, c,
                                          layer, mesh)
            d = quasimode.residual(q, pair, opinv)
            assert quasimode.spectral_inclusion_holds(eig, q, d), (eta, j, d)


def test_orthogonality_empty_hole_control():
    c = geometry.PerforatedCell(H=H, N=8, hole=None)
    mesh = geometry.build_perforated_mesh(c, h=0.02)
    pair = fem.assemble(mesh, 0.0)
    qp = quasimode.build_quasimode(ModeLabel(j=1, k=0), 0.0, c, None, mesh)
    qm = quasimode.build_quasimode(ModeLabel(j=-1, k=0), 0.0, c, None, mesh)
    assert quasimode.almost_orthogonality(qp, qm, pair) < 1e-10


def test_orthogonality_sqrt_eps_bound(setup8, setup16, layer):
    # the normalized cross product stays below a fitted C sqrt(eps)
    eta = 0.5
    vals = []
    for c, mesh, Kf, Mf in (setup8, setup16):
        pair = fem.reduce_pair(Kf, Mf, mesh, eta)
        qp = quasimode.build_quasimode(ModeLabel(j=1, k=0), eta, c, layer, mesh)
        qm = quasimode.build_quasimode(ModeLabel(j=-1, k=0), eta, c, layer, mesh)
        vals.append((c.epsilon, quasimode.almost_orthogonality(qp, qm, pair)))
    C = vals[0][1] / math.sqrt(vals[0][0])
    assert vals[1][1] <= C * math.sqrt(vals[1][0])


def test_norm_check_trend(setup8, setup16, layer):
    eta = 0.5
    devs = []
    for c, mesh, Kf, Mf in (setup8, setup16):
        pair = fem.reduce_pair(Kf, Mf, mesh, eta)
        q = quasimode.build_quasimode(ModeLabel(j=1, k=0), eta, c, layer, mesh)
        devs.append(abs(quasimode.norm_check(q, pair) - 1.0))
    assert devs[1] < devs[0]


def test_residual_scalar_invariance(setup8, layer):
    c, mesh, Kf, Mf = setup8
    pair = fem.reduce_pair(Kf, Mf, mesh, 0.5)
    q = quasimode.build_quasimode(ModeLabel(j=1, k=0), 0.5, c, layer, mesh)
    qs = copy.copy(q)
    qs.field = q.field * np.exp(1j * 1.234)
    a = quasimode.residual(q, pair)
    b = quasimode.residual(qs, pair)
    assert abs(a - b) < 1e-14


def test_quasimode_csv(tmp_path):
    path = tmp_path / "qm.csv"
    rows = [(0.125, 0.5, 1, 1, 3.2e-3, 1.01, 2.1e-2)]
    quasimode.write_quasimode_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "epsilon,eta,sign,j,delta,norm_ratio,ortho_max"
    assert float(lines[1].split(",")[4]) == 3.2e-3