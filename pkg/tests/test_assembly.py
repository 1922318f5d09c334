import numpy as np
import pytest
import scipy.sparse as sp

from gu_crns import CompositeVelocity, Field, build_rect_mesh, l2_project
from gu_crns.assembly import Assembler, FormKind, assemble_step1_system, form_spaces
from gu_crns.scheme import GaugeUzawaSolver, SchemeConfig


def _random_composite(a, rng):
    return CompositeVelocity(Field(a.Y, rng.normal(size=a.Y.dof_count)), Field(a.M, rng.normal(size=a.M.dof_count)))


def test_mass_row_sums(asm8):
    M = asm8.mass_q
    xq_w = asm8.Q.shapes.weights
    phi = asm8.Q.shapes.values
    integrals = np.zeros(asm8.Q.dof_count)
    np.add.at(integrals, asm8.mesh.triangles, np.einsum("tq,qa->ta", xq_w, phi))
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), integrals, atol=1e-14)
    assert M.sum() == pytest.approx(1.0, abs=1e-12)


def test_stiffness_kernel_and_definiteness(asm4):
    np.testing.assert_allclose(asm4.stiffness_q @ np.ones(asm4.Q.dof_count), 0.0, atol=1e-12)
    for M in (asm4.mass_q, asm4.mass_x, asm4.mass_y, asm4.mass_m):
        np.linalg.cholesky(M.toarray())
    ev = np.linalg.eigvalsh(asm4.stiffness_m.toarray())
    assert ev[0] > -1e-12 and ev[1] > 1e-6


def test_curl_of_gradient(asm8):
    # sigma = grad((x^2 + y^2) / 2) = (x, y) is reproduced exactly by P1
    xy = asm8.mesh.vertices
    s = xy.ravel()
    assert s @ (asm8.curl_curl @ s) <= 1e-24 + 1e-14 * s @ (asm8.mass_x @ s)
    # a non-polynomial gradient: the curl pairing decays under refinement
    vals = []
    for n in (8, 16, 32):
        a = Assembler(build_rect_mesh(1, 1, n, n))
        x, y = a.mesh.vertices.T
        g = np.pi * np.column_stack([np.cos(np.pi * x) * np.sin(np.pi * y), np.sin(np.pi * x) * np.cos(np.pi * y)]).ravel()
        vals.append(np.sqrt(g @ (a.curl_curl @ g)))
    assert vals[0] > vals[1] > vals[2]
    assert vals[1] / vals[2] > 1.8


def test_pressure_div_compatibility(asm8, rng):
    u = rng.normal(size=asm8.Y.dof_count)
    u[asm8.Y.essential_dofs] = 0.0
    val = np.ones(asm8.M.dof_count) @ (asm8.pressure_div @ u)
    assert abs(val) <= 1e-12 * np.linalg.norm(u)
    # (grad psi, v) = -(psi, div v) for v vanishing on the boundary
    free = np.setdiff1d(np.arange(asm8.Y.dof_count), asm8.Y.essential_dofs)
    G, D = asm8.grad_pressure.toarray()[free], asm8.pressure_div.T.toarray()[free]
    np.testing.assert_allclose(G, -D, atol=1e-12)


def test_trilinear_zero_coefficient(asm4):
    u = CompositeVelocity(Field.zeros(asm4.Y), Field.zeros(asm4.M))
    assert abs(asm4.trilinear(u)).max() == 0.0


def test_trilinear_skew_random(asm8, rng):
    for _ in range(20):
        B = asm8.trilinear(_random_composite(asm8, rng))
        v, w = rng.normal(size=(2, asm8.Y.dof_count))
        scale = abs(B).max() * np.linalg.norm(v) * np.linalg.norm(w)
        assert abs(v @ (B @ v)) <= 1e-12 * scale
        assert abs(v @ (B @ w) + w @ (B @ v)) <= 1e-12 * scale


def test_trilinear_matches_convective_form_for_smooth_solenoidal(rng):
    # for u continuous, divergence-free and zero on the boundary, the skew form
    # equals (u . grad v, w) + (div u v, w) / 2 up to discretisation error
    a = Assembler(build_rect_mesh(1, 1, 16, 16))
    f = lambda x, y: np.stack([np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y), -np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2], -1)
    u = l2_project(a.Y, f)
    B = a.trilinear(u)
    v = l2_project(a.Y, lambda x, y: np.stack([x * (1 - x) * y, y * (1 - y)], -1)).coeffs
    w = l2_project(a.Y, lambda x, y: np.stack([np.cos(x), x * y], -1), constrained=False).coeffs
    uq, gv = u.values(), Field(a.Y, v).gradients()
    conv = np.einsum("tq,tqd,tqcd,tqc->", a.Q.shapes.weights, uq, gv, Field(a.Y, w).values())
    div_term = 0.5 * np.einsum("tq,tq,tqc,tqc->", a.Q.shapes.weights, u.divergence(), Field(a.Y, v).values(), Field(a.Y, w).values())
    assert w @ (B @ v) == pytest.approx(conv + div_term, rel=2e-2, abs=1e-3)


def test_coupling_blocks_cancel(asm8, rng):
    eta = Field(asm8.Q, rng.normal(size=asm8.Q.dof_count))
    sig = Field(asm8.X, rng.normal(size=asm8.X.dof_count))
    np.testing.assert_allclose(asm8.sigma_eta(eta).toarray(), -asm8.eta_grad_eta(eta).T.toarray(), atol=1e-12)
    np.testing.assert_allclose(asm8.conv_eta(eta).toarray(), -asm8.eta_grad_eta_u(eta).T.toarray(), atol=1e-12)
    np.testing.assert_allclose(asm8.conv_sigma(sig).toarray(), -asm8.sigma_div_sigma(sig).T.toarray(), atol=1e-12)


def test_conv_eta_constant_test_function(asm8, rng):
    eta = Field(asm8.Q, rng.normal(size=asm8.Q.dof_count))
    ones = np.ones(asm8.Q.dof_count)
    assert abs(ones @ asm8.conv_eta(eta)).max() <= 1e-12
    assert abs(ones @ asm8.sigma_eta(eta)).max() <= 1e-12


def test_form_spaces_and_generic_entry(asm4, rng):
    for kind in FormKind:
        r, c = form_spaces(kind)
        coeff = None
        if kind in (FormKind.TRILINEAR,):
            coeff = _random_composite(asm4, rng)
        elif kind in (FormKind.CONV_ETA, FormKind.SIGMA_ETA, FormKind.ETA_GRAD_ETA, FormKind.ETA_GRAD_ETA_U):
            coeff = Field.zeros(asm4.Q)
        elif kind in (FormKind.CONV_SIGMA, FormKind.SIGMA_DIV_SIGMA):
            coeff = Field.zeros(asm4.X)
        A = asm4.assemble(kind, coeff)
        assert A.shape == (asm4.space(r).dof_count, asm4.space(c).dof_count)
    with pytest.raises(ValueError):
        asm4.assemble(FormKind.TRILINEAR)
    with pytest.raises(ValueError):
        asm4.assemble(FormKind.MASS_Q, Field.zeros(asm4.Q))


def test_mesh_mismatch(asm4, asm8):
    with pytest.raises(ValueError):
        asm4.conv_eta(Field.zeros(asm8.Q))


def _zero_state(gu):
    z = lambda x, y: 0 * x
    zv = lambda x, y: np.zeros(np.shape(x) + (2,))
    return gu.init_state(z, zv, zv, c0=z)


def test_step1_zero_fixed_point():
    gu = GaugeUzawaSolver(build_rect_mesh(1, 1, 4, 4), SchemeConfig(tau=0.1))
    st = _zero_state(gu)
    out = assemble_step1_system(st, 0.1, (1, 1, 1), gu.asm).solve()
    for v in out.values():
        assert np.all(v == 0.0)


def test_step1_conserves_constant_eta():
    gu = GaugeUzawaSolver(build_rect_mesh(1, 1, 6, 6), SchemeConfig(tau=0.3))
    st = gu.init_state(lambda x, y: 2.5 + 0 * x, lambda x, y: np.zeros(np.shape(x) + (2,)),
                       lambda x, y: np.zeros(np.shape(x) + (2,)))
    out = assemble_step1_system(st, 0.3, (1, 1, 1), gu.asm).solve()
    m0 = st.eta.integral()
    assert abs(Field(gu.asm.Q, out["eta"]).integral() - m0) <= 1e-10 * abs(m0)
