"""First- and second-order Gauge-Uzawa time stepping.

One step solves the coupled ``(eta, sigma, u_hat)`` system, a Neumann
Poisson problem for the gauge variable ``rho``, an L2 projection for the
Uzawa accumulator ``s``, and then forms the composite velocity and the
pressure algebraically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Assembler, assemble_step1_system, composite_mass_action, coupled_system
from .mesh import TriMesh
from .quadrature import DEFAULT_DEGREE
from .sparse import LUFactor, SolverFailure, cg_solve
from .spaces import CompositeVelocity, Field, l2_project

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SchemeConfig:
    tau: float
    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    order: int = 1
    solver: str = "direct"  # coupled system: "direct" or "gmres"
    poisson_solver: str = "direct"  # gauge Poisson problem: "direct" or "cg"
    tol: float = 1e-10
    c_recovery: str = "gradient"  # "gradient" or "flux"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("mu1", "mu2", "mu3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")
        if self.solver not in ("direct", "gmres"):
            raise ValueError(f"solver must be 'direct' or 'gmres', got {self.solver!r}")
        if self.poisson_solver not in ("direct", "cg"):
            raise ValueError(f"poisson_solver must be 'direct' or 'cg', got {self.poisson_solver!r}")
        if self.c_recovery not in ("gradient", "flux"):
            raise ValueError(f"c_recovery must be 'gradient' or 'flux', got {self.c_recovery!r}")

    @property
    def mu(self) -> tuple[float, float, float]:
        return (self.mu1, self.mu2, self.mu3)


@dataclass(frozen=True, eq=False)
class SchemeState:
    """Discrete unknowns at one time level.

    ``u`` is the composite end-of-step velocity; its gradient potential is
    ``rho`` for the first-order scheme and the gauge increment for the
    second-order one.  ``prev`` holds the previous level when the
    second-order scheme needs it.
    """

    n: int
    t: float
    eta: Field
    sigma: Field
    u_hat: Field
    rho: Field
    s: Field
    p: Field
    u: CompositeVelocity
    c: Field | None = None
    prev: "SchemeState | None" = None

    def without_history(self) -> "SchemeState":
        return replace(self, prev=None)


class GaugeUzawaSolver:
    def __init__(self, mesh: TriMesh, config: SchemeConfig, degree: int = DEFAULT_DEGREE):
        self.mesh = mesh
        self.config = config
        self.asm = Assembler(mesh, degree)
        asm = self.asm
        self._ones_mass = asm.mass_q @ np.ones(asm.Q.dof_count)  # (1, psi_i)
        m = sp.csr_matrix(self._ones_mass[:, None])
        self._poisson = LUFactor(sp.bmat([[asm.stiffness_m, m], [m.T, None]], format="csc"))
        self._projector = LUFactor(sp.bmat([[asm.mass_m, m], [m.T, None]], format="csc"))
        self._c_factors: dict = {}

    # -- helpers -------------------------------------------------------------

    @property
    def tau(self) -> float:
        return self.config.tau

    def _bordered(self, factor: LUFactor, b: np.ndarray) -> np.ndarray:
        x = factor.solve(np.append(b, 0.0))
        return x[:-1]

    def _solve_gauge(self, b: np.ndarray) -> np.ndarray:
        """Mean-zero ``rho`` with ``(grad rho, grad psi) = b(psi)`` on mean-zero tests."""
        if self.config.poisson_solver == "direct":
            return self._bordered(self._poisson, b)
        if self.config.poisson_solver != "cg":
            raise ValueError(f"unknown poisson solver {self.config.poisson_solver!r}")
        m = self._ones_mass
        # remove the component absorbed by the mean-zero multiplier
        b = b - m * (b.sum() / m.sum())
        K = self.asm.stiffness_m
        op = spla.LinearOperator(K.shape, matvec=lambda x: K @ x + m * (m @ x))
        x, _ = cg_solve(op, b, tol=self.config.tol)
        return x

    def _forcing_loads(self, forcing, t):
        if forcing is None:
            return None
        a = self.asm
        return (a.load("Q", forcing.f_eta, t), a.load("X", forcing.f_sigma, t), a.load("Y", forcing.f_u, t))

    @staticmethod
    def _boundary(forcing, t):
        if forcing is None:
            return None
        return lambda x, y: forcing.u(x, y, t)

    def _fail(self, step: int, exc: SolverFailure):
        raise SolverFailure(
            f"step {step}: {exc}", iterations=exc.iterations, residual=exc.residual
        ) from exc

    # -- initial data ------------------------------------------------------------

    def init_state(self, eta0, sigma0, u0, c0=None, p0=None, t0: float = 0.0, u_boundary=None) -> SchemeState:
        """L2-project the initial data; ``s`` and ``rho`` start at zero."""
        a = self.asm
        eta = l2_project(a.Q, eta0)
        sigma = l2_project(a.X, sigma0)
        u_hat = l2_project(a.Y, u0, g=u_boundary)
        zero_m = Field.zeros(a.M)
        p = l2_project(a.M, p0) if p0 is not None else zero_m
        c = l2_project(a.Q, c0) if c0 is not None else None
        return SchemeState(
            n=0,
            t=t0,
            eta=eta,
            sigma=sigma,
            u_hat=u_hat,
            rho=zero_m,
            s=zero_m,
            p=p,
            u=CompositeVelocity(u_hat, zero_m),
            c=c,
        )

    # -- first order ------------------------------------------------------------

    def gu1_step(self, state: SchemeState, forcing=None) -> SchemeState:
        cfg, a, tau = self.config, self.asm, self.tau
        t1 = state.t + tau
        try:
            system = assemble_step1_system(
                state, tau, cfg.mu, a, self._forcing_loads(forcing, t1), self._boundary(forcing, t1)
            )
            sol = system.solve(cfg.solver, cfg.tol)
            eta = Field(a.Q, sol["eta"])
            sigma = Field(a.X, sol["sigma"])
            u_hat = Field(a.Y, sol["u"])
            div_hat = a.pressure_div @ u_hat.coeffs  # (div u_hat, psi_i)
            rho = Field(a.M, self._solve_gauge(div_hat))
            s = Field(a.M, self._bordered(self._projector, a.mass_m @ state.s.coeffs - div_hat))
            c = self.recover_c(state, sigma, forcing) if state.c is not None else None
        except SolverFailure as exc:
            self._fail(state.n + 1, exc)
        u = CompositeVelocity(u_hat, rho)
        p = cfg.mu3 * s - (1.0 / tau) * rho
        return SchemeState(state.n + 1, t1, eta, sigma, u_hat, rho, s, p, u, c)

    # -- second order -----------------------------------------------------------

    def start_second_order(self, state0: SchemeState, forcing=None) -> SchemeState:
        """First level by the first-order step, then ``rho = -2 tau p / 3`` and ``s = 0``."""
        s1 = self.gu1_step(state0, forcing)
        return replace(
            s1,
            rho=(-2.0 * self.tau / 3.0) * s1.p,
            s=Field.zeros(self.asm.M),
            prev=state0.without_history(),
        )

    def gu2_step(self, state: SchemeState, forcing=None) -> SchemeState:
        if state.prev is None:
            raise ValueError("second-order step needs two levels; use start_second_order first")
        cfg, a, tau = self.config, self.asm, self.tau
        old = state.prev
        t1 = state.t + tau
        eta_bar = 2.0 * state.eta - old.eta
        sigma_bar = 2.0 * state.sigma - old.sigma
        u_bar = 2.0 * state.u - old.u
        k = 1.0 / (2.0 * tau)
        rhs_eta = k * (a.mass_q @ (4.0 * state.eta.coeffs - old.eta.coeffs))
        rhs_sigma = k * (a.mass_x @ (4.0 * state.sigma.coeffs - old.sigma.coeffs))
        rhs_u = k * (4.0 * composite_mass_action(a, state.u) - composite_mass_action(a, old.u))
        rhs_u = rhs_u + a.pressure_div.T @ state.p.coeffs
        loads = self._forcing_loads(forcing, t1)
        if loads is not None:
            rhs_eta, rhs_sigma, rhs_u = rhs_eta + loads[0], rhs_sigma + loads[1], rhs_u + loads[2]
        try:
            system = coupled_system(
                a,
                alpha=3.0 * k,
                mu=cfg.mu,
                eta_c=eta_bar,
                sigma_c=sigma_bar,
                u_c=u_bar,
                rhs_eta=rhs_eta,
                rhs_sigma=rhs_sigma,
                rhs_u=rhs_u,
                u_boundary=self._boundary(forcing, t1),
            )
            sol = system.solve(cfg.solver, cfg.tol)
            eta = Field(a.Q, sol["eta"])
            sigma = Field(a.X, sol["sigma"])
            u_hat = Field(a.Y, sol["u"])
            div_hat = a.pressure_div @ u_hat.coeffs
            rho = Field(a.M, self._solve_gauge(a.stiffness_m @ state.rho.coeffs + div_hat))
            s = Field(a.M, self._bordered(self._projector, a.mass_m @ state.s.coeffs - div_hat))
            c = self.recover_c(state, sigma, forcing) if state.c is not None else None
        except SolverFailure as exc:
            self._fail(state.n + 1, exc)
        u = CompositeVelocity(u_hat, rho - state.rho)
        p = cfg.mu3 * s - (3.0 * k) * rho
        return SchemeState(state.n + 1, t1, eta, sigma, u_hat, rho, s, p, u, c, prev=state.without_history())

    def step(self, state: SchemeState, forcing=None) -> SchemeState:
        if self.config.order == 1:
            return self.gu1_step(state, forcing)
        if state.prev is None:
            return self.start_second_order(state, forcing)
        return self.gu2_step(state, forcing)

    def run(self, state: SchemeState, n_steps: int, forcing=None):
        """Yield the states after each of ``n_steps`` steps."""
        for _ in range(n_steps):
            state = self.step(state, forcing)
            yield state

    # -- concentration -------------------------------------------------------------

    def recover_c(self, state: SchemeState, sigma_new: Field, forcing=None) -> Field:
        """Update the concentration from level ``n`` to ``n + 1``.

        ``c_recovery="flux"`` drives ``c`` by the new flux ``sigma`` directly;
        ``"gradient"`` uses the equivalent form with ``sigma`` replaced by
        ``grad c``, i.e. convection by ``u^n`` and diffusion of ``c`` itself.
        Backward Euler when ``state.prev`` is absent, BDF2 with extrapolated
        ``eta`` and ``u`` otherwise.
        """
        a, cfg, tau = self.asm, self.config, self.tau
        old = state.prev
        if old is None or old.c is None:
            alpha, cm = 1.0 / tau, (1.0 / tau) * state.c.coeffs
            eta_c, u_c = state.eta, state.u
        else:
            alpha = 1.5 / tau
            cm = (4.0 * state.c.coeffs - old.c.coeffs) / (2.0 * tau)
            eta_c, u_c = 2.0 * state.eta - old.eta, 2.0 * state.u - old.u
        b = a.mass_q @ cm + a.load_values("Q", 0.5 * eta_c.values() ** 2)
        if forcing is not None:
            b = b + a.load("Q", forcing.f_c, state.t + tau)
        if cfg.c_recovery == "flux":
            key = ("flux", alpha)
            if key not in self._c_factors:
                self._c_factors[key] = LUFactor((alpha + 1.0) * a.mass_q)
            src = -np.sum(u_c.values() * sigma_new.values(), axis=-1) + cfg.mu2 * sigma_new.divergence()
            return Field(a.Q, self._c_factors[key].solve(b + a.load_values("Q", src)))
        A = (alpha + 1.0) * a.mass_q + cfg.mu2 * a.stiffness_q + a.scalar_convection(u_c)
        return Field(a.Q, LUFactor(A).solve(b))

    # -- diagnostics -------------------------------------------------------------

    def velocity_norm_sq(self, u: CompositeVelocity) -> float:
        a = self.asm
        uh, r = u.hat.coeffs, u.rho.coeffs
        val = uh @ (a.mass_y @ uh) + 2.0 * uh @ (a.grad_pressure @ r) + r @ (a.stiffness_m @ r)
        return float(max(val, 0.0))

    def energy_e3(self, state: SchemeState, s_weight: float | None = None) -> float:
        """``|eta|^2 + |sigma|^2 + |u|^2 + w |s|^2`` with the composite velocity.

        The decay argument pairs the ``s`` update with ``mu3 tau``, so that is
        the default weight ``w``; ``s_weight=1`` gives the unweighted sum.
        """
        a = self.asm
        w = self.config.mu3 * self.tau if s_weight is None else s_weight
        e, g, s = state.eta.coeffs, state.sigma.coeffs, state.s.coeffs
        return float(
            e @ (a.mass_q @ e) + g @ (a.mass_x @ g) + self.velocity_norm_sq(state.u) + w * (s @ (a.mass_m @ s))
        )

    def div_residual(self, u: CompositeVelocity) -> float:
        """``max_psi |(u, grad psi)| / max(1, |u|)`` over the P1 basis."""
        a = self.asm
        r = a.grad_pressure.T @ u.hat.coeffs + a.stiffness_m @ u.rho.coeffs
        return float(np.max(np.abs(r)) / max(1.0, np.sqrt(self.velocity_norm_sq(u))))

    def eta_mass(self, state: SchemeState) -> float:
        return float(self._ones_mass @ state.eta.coeffs)
