"""Tests for P1 assembly and the quasi-periodic eigensolver.

Oracle for eigenvalues: the closed-form spectrum of the unperforated
cell (separable modes), via dispersion.sorted_spectrum.
"""

import numpy as np
import pytest

from perfband import dispersion, fem, geometry


def empty_cell_mesh(H, h):
    cell = geometry.PerforatedCell(H=H, N=4, hole=None)
    return geometry.build_perforated_mesh(cell, h=h)


def exact_levels(eta, H, m):
    spec = dispersion.sorted_spectrum(dispersion.FloquetPoint(eta=eta, H=H), m)
    return np.array([lv.value for lv in spec.levels])


def test_mass_matrix_integrates_constants():
    mesh = empty_cell_mesh(0.3, 0.05)
    K, M = fem.assemble_full(mesh)
    ones = np.ones(mesh.n_vertices)
    assert abs(ones @ (M @ ones) - 0.3) < 1e-12
    # constants lie in the stiffness kernel
    assert np.linalg.norm(K @ ones, np.inf) < 1e-12


def test_stiffness_of_linear_field():
    # grad(x1) = (1,0), so u^T K u must equal the cell area
    mesh = empty_cell_mesh(0.5, 0.05)
    K, _ = fem.assemble_full(mesh)
    u = mesh.vertices[:, 0].copy()
    assert abs(u @ (K @ u) - 0.5) < 1e-12


def test_area_identity_perforated():
    cell = geometry.canonical_cell(H=0.3, N=8)
    mesh = geometry.build_perforated_mesh(cell, h=0.02)
    _, M = fem.assemble_full(mesh)
    ones = np.ones(mesh.n_vertices)
    quad_area = ones @ (M @ ones)
    assert abs(quad_area - mesh.area()) < 1e-12
    # and the mesh area itself matches H - N eps^2 |hole polygon|
    ring = geometry.polygonalize(cell.hole, geometry.default_ring_segments(cell.hole, 0.02))
    poly_area = 0.5 * abs(np.sum(ring[:, 0] * np.roll(ring[:, 1], -1)
                                 - np.roll(ring[:, 0], -1) * ring[:, 1]))
    exact = cell.H - cell.N * cell.epsilon ** 2 * poly_area
    assert abs(quad_area - exact) < 1e-9


def test_dof_map_phase_relation():
    mesh = empty_cell_mesh(0.3, 0.05)
    eta = 0.9
    dof = fem.build_dof_map(mesh, eta)
    u_red = np.arange(1, dof.n_reduced + 1, dtype=complex)
    u_full = dof.expand(u_red)
    assert np.allclose(u_full[dof.slave],
                       np.exp(1j * eta) * u_full[dof.slave_master], atol=0, rtol=0)
    # restrict picks the retained entries back out
    assert np.array_equal(dof.restrict(u_full), u_red)


def test_reduced_pair_hermitian():
    mesh = empty_cell_mesh(0.3, 0.04)
    for eta in (0.0, 0.7, -np.pi):
        pair = fem.assemble(mesh, eta)
        assert fem.hermiticity_defect(pair.K) <= fem.HERMITICITY_TOL
        assert fem.hermiticity_defect(pair.M) <= fem.HERMITICITY_TOL


def test_eigensolve_matches_exact_spectrum():
    # coarse/fine pair plus Richardson lands well inside 0.5 percent
    for H in (0.3, 0.75):
        cell = geometry.PerforatedCell(H=H, N=4, hole=None)
        mesh_h = geometry.build_perforated_mesh(cell, h=0.02)
        mesh_h2 = geometry.build_perforated_mesh(cell, h=0.01)
        Kf, Mf = fem.assemble_full(mesh_h)
        Kf2, Mf2 = fem.assemble_full(mesh_h2)
        for eta in (0.0, np.pi / 2, np.pi):
            r = fem.solve_lowest(fem.reduce_pair(Kf, Mf, mesh_h, eta), 4)
            r2 = fem.solve_lowest(fem.reduce_pair(Kf2, Mf2, mesh_h2, eta), 4)
            extr = fem.richardson(r.values, r2.values)
            exact = exact_levels(eta, H, 4)
            rel = np.abs(extr - exact) / np.maximum(1.0, np.abs(exact))
            assert rel.max() < 5e-3, (H, eta, rel)


def test_eigenvectors_m_orthonormal():
    mesh = empty_cell_mesh(0.3, 0.02)
    for eta in (0.0, np.pi):  # both have a degenerate pair among the lowest 4
        pair = fem.assemble(mesh, eta)
        r = fem.solve_lowest(pair, 4)
        G = r.vectors.conj().T @ (pair.M @ r.vectors)
        assert np.abs(G - np.eye(4)).max() < 1e-8
        assert r.residuals.max() < 1e-10


def test_lowest_mode_at_eta_zero_is_constant():
    mesh = empty_cell_mesh(0.4, 0.04)
    pair = fem.assemble(mesh, 0.0)
    r = fem.solve_lowest(pair, 2)
    assert abs(r.values[0]) < 1e-10
    v = r.vectors[:, 0]
    v = v / v[np.argmax(np.abs(v))]
    assert np.abs(v - 1.0).max() < 1e-8


def test_solver_deterministic():
    mesh = empty_cell_mesh(0.3, 0.03)
    pair = fem.assemble(mesh, 0.7)
    a = fem.solve_lowest(pair, 4)
    b = fem.solve_lowest(pair, 4)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.vectors, b.vectors)


def test_perforated_solve_sanity():
    # perforation shifts eigenvalues but keeps them near the limit values
    cell = geometry.canonical_cell(H=0.3, N=8)
    mesh = geometry.build_perforated_mesh(cell, h=0.02)
    pair = fem.assemble(mesh, 0.7)
    r = fem.solve_lowest(pair, 3)
    exact = exact_levels(0.7, 0.3, 3)
    assert np.all(np.abs(r.values - exact) < 0.5 + 0.05 * exact)
    assert r.residuals.max() < 1e-10


def test_richardson_removes_quadratic_term():
    lam_h = np.array([4.0 + 0.04])
    lam_h2 = np.array([4.0 + 0.01])
    assert np.allclose(fem.richardson(lam_h, lam_h2), [4.0])


def test_solve_csv_and_eigvec_dump(tmp_path):
    mesh = empty_cell_mesh(0.3, 0.05)
    pair = fem.assemble(mesh, 0.3)
    r = fem.solve_lowest(pair, 2)
    csv_path = tmp_path / "solve.csv"
    rows = [(0.3, 0.25, p, r.values[p], r.residuals[p]) for p in range(2)]
    fem.write_solve_csv(csv_path, rows)
    text = csv_path.read_text().splitlines()
    assert text[0] == "eta,epsilon,p,lambda,residual"
    assert len(text) == 3
    got = float(text[1].split(",")[3])
    assert got == r.values[0]

    path = fem.save_eigvecs(r, tmp_path)
    data = np.load(path)
    assert np.array_equal(data["values"], r.values)
    assert np.array_equal(data["vectors"], r.vectors)


def test_h1_l2_products():
    mesh = empty_cell_mesh(0.3, 0.05)
    pair = fem.assemble(mesh, 0.5)
    rng = np.random.default_rng(7)
    u = rng.standard_normal(pair.n) + 1j * rng.standard_normal(pair.n)
    v = rng.standard_normal(pair.n) + 1j * rng.standard_normal(pair.n)
    # conjugate symmetry and positivity
    assert abs(fem.h1_product(pair, u, v) - np.conj(fem.h1_product(pair, v, u))) < 1e-12
    assert fem.h1_product(pair, u, u).real > 0
    assert fem.l2_product(pair, u, u).real > 0
    assert fem.h1_norm(pair, u) > 0