import numpy as np
import pytest

from gu_crns import CompositeVelocity, Field, GaugeUzawaSolver, SchemeConfig, SolverFailure, build_rect_mesh
from gu_crns.verification import manufactured_case, run_manufactured, final_errors, stock_initial_data


def zero(x, y):
    return 0.0 * x


def zero_vec(x, y):
    return np.zeros(np.shape(x) + (2,))


def stability_run(n, tau, steps, **kw):
    d = stock_initial_data("stability")
    gu = GaugeUzawaSolver(build_rect_mesh(1, 1, n, n), SchemeConfig(tau=tau, **kw))
    st0 = gu.init_state(d.eta, d.sigma, d.u, c0=d.c)
    return gu, st0, list(gu.run(st0, steps))


@pytest.fixture(scope="module")
def short_run():
    return stability_run(8, 0.05, 12)


@pytest.mark.parametrize(
    "kw", [dict(tau=0), dict(tau=0.1, mu2=0), dict(tau=0.1, order=3), dict(tau=0.1, solver="cholesky"),
           dict(tau=0.1, poisson_solver="amg"), dict(tau=0.1, c_recovery="nodal")],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SchemeConfig(**kw)


def test_init_state():
    gu = GaugeUzawaSolver(build_rect_mesh(1, 1, 4, 4), SchemeConfig(tau=0.1))
    st = gu.init_state(lambda x, y: 1.0 + 0 * x, zero_vec, zero_vec)
    np.testing.assert_allclose(st.eta.coeffs, 1.0, atol=1e-12)
    assert np.all(st.s.coeffs == 0) and np.all(st.rho.coeffs == 0)
    case = manufactured_case()
    st = gu.init_state(lambda x, y: case.eta(x, y, 0.0), lambda x, y: case.sigma(x, y, 0.0),
                       lambda x, y: case.u(x, y, 0.0), c0=lambda x, y: case.c(x, y, 0.0))
    for f in (st.eta, st.sigma, st.u_hat, st.c):
        assert np.all(f.coeffs == 0.0)
    d = stock_initial_data("repulsion")
    st = gu.init_state(d.eta, d.sigma, d.u, c0=d.c, p0=d.p)
    assert np.all(st.u_hat.coeffs == 0) and np.all(st.p.coeffs == 0)


@pytest.mark.parametrize("order", [1, 2])
def test_zero_fixed_point(order):
    gu = GaugeUzawaSolver(build_rect_mesh(1, 1, 4, 4), SchemeConfig(tau=0.1, order=order))
    st = gu.init_state(zero, zero_vec, zero_vec, c0=zero)
    for st in gu.run(st, 3):
        for f in (st.eta, st.sigma, st.u_hat, st.rho, st.s, st.p, st.c):
            assert np.all(f.coeffs == 0.0)


def test_energy_decay_and_invariants(short_run):
    gu, st0, states = short_run
    E = [gu.energy_e3(st0)] + [gu.energy_e3(s) for s in states]
    assert np.all(np.diff(E) <= 1e-10 * E[0])
    m0 = gu.eta_mass(st0)
    for n, st in enumerate(states, start=1):
        assert abs(gu.eta_mass(st) - m0) <= 1e-10 * abs(m0)
        assert gu.div_residual(st.u) <= 1e-8
        assert abs(st.s.integral()) <= n * 1e-10
        assert abs(st.rho.integral()) <= 1e-10 * max(1.0, st.rho.l2_norm())
        np.testing.assert_allclose(st.p.coeffs, st.s.coeffs - st.rho.coeffs / gu.tau, atol=1e-12 * np.abs(st.p.coeffs).max())
        assert st.n == n and st.t == pytest.approx(n * gu.tau)


def test_energy_weight_matches_unweighted_at_unit_step():
    gu, st0, states = stability_run(4, 1.0, 2)
    for st in states:
        assert gu.energy_e3(st) == gu.energy_e3(st, s_weight=1.0)


def test_velocity_norm_matches_quadrature(short_run):
    gu, _, states = short_run
    u = states[-1].u
    assert gu.velocity_norm_sq(u) == pytest.approx(u.l2_norm() ** 2, rel=1e-12)


def test_determinism():
    a = stability_run(4, 0.1, 3)[2][-1]
    b = stability_run(4, 0.1, 3)[2][-1]
    for f in ("eta", "sigma", "u_hat", "rho", "s", "p", "c"):
        assert np.array_equal(getattr(a, f).coeffs, getattr(b, f).coeffs)


def test_iterative_paths_match_direct():
    ref = stability_run(6, 0.1, 3)[2][-1]
    it = stability_run(6, 0.1, 3, solver="gmres", poisson_solver="cg", tol=1e-12)[2][-1]
    for f in ("eta", "sigma", "u_hat", "p"):
        x, y = getattr(ref, f).coeffs, getattr(it, f).coeffs
        assert np.linalg.norm(x - y) <= 1e-8 * max(1.0, np.linalg.norm(x)), f


def test_second_order_start_and_step():
    gu, st0, _ = stability_run(4, 0.1, 0, order=2)
    s1 = gu.step(st0)
    assert s1.prev is not None
    np.testing.assert_allclose(s1.rho.coeffs, -2 * 0.1 / 3 * s1.p.coeffs)
    assert np.all(s1.s.coeffs == 0)
    s2 = gu.step(s1)
    assert s2.prev is not None and s2.prev.prev is None
    assert gu.div_residual(s2.u) <= 1e-8
    np.testing.assert_allclose(s2.p.coeffs, s2.s.coeffs - 1.5 / 0.1 * s2.rho.coeffs, atol=1e-10)
    np.testing.assert_allclose(s2.u.rho.coeffs, s2.rho.coeffs - s1.rho.coeffs, atol=1e-14)
    with pytest.raises(ValueError):
        gu.gu2_step(st0)
    # equal gauge levels give u = u_hat
    same = CompositeVelocity(s2.u_hat, s2.rho - s2.rho)
    np.testing.assert_allclose(same.values(), s2.u_hat.values())


@pytest.mark.parametrize("mode", ["gradient", "flux"])
def test_recover_c_constant_eta(mode):
    k, tau = 1.7, 0.2
    gu = GaugeUzawaSolver(build_rect_mesh(1, 1, 4, 4), SchemeConfig(tau=tau, c_recovery=mode))
    st = gu.init_state(lambda x, y: k + 0 * x, zero_vec, zero_vec, c0=zero)
    c = gu.recover_c(st, Field.zeros(gu.asm.X))
    np.testing.assert_allclose(c.coeffs, 0.5 * k**2 * tau / (1 + tau), atol=1e-10)
    st0 = gu.init_state(zero, zero_vec, zero_vec, c0=zero)
    assert np.all(gu.recover_c(st0, Field.zeros(gu.asm.X)).coeffs == 0)


def test_flux_recovery_is_consistent_but_less_accurate():
    case = manufactured_case()
    errs = {m: final_errors(run_manufactured(16, 0.05, 0.2, case=case, c_recovery=m)[1], case)["c"]
            for m in ("gradient", "flux")}
    assert errs["gradient"] < 0.02
    assert errs["gradient"] < errs["flux"] < 0.1


def test_first_order_in_time():
    e = [final_errors(run_manufactured(24, tau, 1.0)[1], manufactured_case())["u"] for tau in (1 / 4, 1 / 8)]
    assert 1.6 < e[0] / e[1] < 2.4


def test_failure_carries_step_index(monkeypatch):
    gu, st0, _ = stability_run(4, 0.1, 0)
    from gu_crns import sparse

    def boom(self, method="direct", tol=1e-10):
        raise SolverFailure("singular", residual=1.0)

    monkeypatch.setattr(sparse.BlockSystem, "solve", boom)
    with pytest.raises(SolverFailure, match="step 1"):
        gu.step(st0)
