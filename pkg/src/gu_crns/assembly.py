"""Bilinear and coefficient-dependent forms of the coupled scheme.

Naming follows the test/trial convention: entry ``(i, j)`` of every
matrix is the form evaluated with trial function ``j`` and test function
``i``.  Coefficient fields are sampled at the quadrature points of one
shared rule, so forms that cancel in the energy identity cancel exactly.
"""

from __future__ import annotations

import enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh
from .quadrature import DEFAULT_DEGREE
from .sparse import BlockSystem, ScatterPattern
from .spaces import (
    CompositeVelocity,
    FESpace,
    Field,
    SpaceKind,
    apply_dirichlet,
    build_space,
    load_vector,
    scalar_mass_local,
    vectorize_local,
)


class FormKind(enum.Enum):
    MASS_Q = "mass_q"
    STIFFNESS_Q = "stiffness_q"
    MASS_X = "mass_x"
    DIV_DIV = "div_div"
    CURL_CURL = "curl_curl"
    MASS_Y = "mass_y"
    STIFFNESS_Y = "stiffness_y"
    MASS_M = "mass_m"
    STIFFNESS_M = "stiffness_m"
    PRESSURE_DIV = "pressure_div"  # (div v, q): rows M_h, cols Y_h
    GRAD_PRESSURE = "grad_pressure"  # (grad psi, v): rows Y_h, cols M_h
    TRILINEAR = "trilinear"
    CONV_ETA = "conv_eta"
    SIGMA_ETA = "sigma_eta"
    CONV_SIGMA = "conv_sigma"
    ETA_GRAD_ETA = "eta_grad_eta"  # -(eta^n grad eta, w): rows X_h
    ETA_GRAD_ETA_U = "eta_grad_eta_u"  # (eta^n grad eta, v): rows Y_h
    SIGMA_DIV_SIGMA = "sigma_div_sigma"


_PAIRS = {
    FormKind.MASS_Q: ("Q", "Q"),
    FormKind.STIFFNESS_Q: ("Q", "Q"),
    FormKind.MASS_X: ("X", "X"),
    FormKind.DIV_DIV: ("X", "X"),
    FormKind.CURL_CURL: ("X", "X"),
    FormKind.MASS_Y: ("Y", "Y"),
    FormKind.STIFFNESS_Y: ("Y", "Y"),
    FormKind.MASS_M: ("M", "M"),
    FormKind.STIFFNESS_M: ("M", "M"),
    FormKind.PRESSURE_DIV: ("M", "Y"),
    FormKind.GRAD_PRESSURE: ("Y", "M"),
    FormKind.TRILINEAR: ("Y", "Y"),
    FormKind.CONV_ETA: ("Q", "Y"),
    FormKind.SIGMA_ETA: ("Q", "X"),
    FormKind.CONV_SIGMA: ("X", "Y"),
    FormKind.ETA_GRAD_ETA: ("X", "Q"),
    FormKind.ETA_GRAD_ETA_U: ("Y", "Q"),
    FormKind.SIGMA_DIV_SIGMA: ("Y", "X"),
}


def form_spaces(kind: FormKind) -> tuple[str, str]:
    """(test space, trial space) labels of a form."""
    return _PAIRS[FormKind(kind)]


def _ein(expr, *ops):
    return np.einsum(expr, *ops, optimize=True)


class Assembler:
    """Owns the four discrete spaces on one mesh and assembles forms on them."""

    def __init__(self, mesh: TriMesh, degree: int = DEFAULT_DEGREE):
        self.mesh = mesh
        self.Q = build_space(mesh, SpaceKind.SCALAR_P1, degree)
        self.X = build_space(mesh, SpaceKind.VECTOR_P1, degree)
        self.Y = build_space(mesh, SpaceKind.MINI_VELOCITY, degree)
        self.M = build_space(mesh, SpaceKind.PRESSURE_P1, degree)
        self.rule = self.Q.rule
        self._patterns: dict = {}

    def space(self, label: str) -> FESpace:
        return {"Q": self.Q, "X": self.X, "Y": self.Y, "M": self.M}[label]

    # -- scatter -------------------------------------------------------------

    def _scatter(self, rows: str, cols: str, local: np.ndarray) -> sp.csr_matrix:
        key = (rows, cols)
        if key not in self._patterns:
            R, C = self.space(rows), self.space(cols)
            self._patterns[key] = ScatterPattern(R.cell_dofs, C.cell_dofs, (R.dof_count, C.dof_count))
        return self._patterns[key].assemble(local)

    # -- quadrature data -----------------------------------------------------

    @property
    def _w(self):
        return self.Q.shapes.weights

    @property
    def _phi(self):  # P1 values (nq, 3)
        return self.Q.shapes.values

    @property
    def _dphi(self):  # P1 gradients (T, nq, 3, 2)
        return self.Q.shapes.grads

    @property
    def _psi(self):  # P1b values (nq, 4)
        return self.Y.shapes.values

    @property
    def _dpsi(self):  # P1b gradients (T, nq, 4, 2)
        return self.Y.shapes.grads

    def _check(self, f):
        sp_ = f.hat.space if isinstance(f, CompositeVelocity) else f.space
        if sp_.mesh is not self.mesh:
            raise ValueError("coefficient field lives on a different mesh")

    # -- constant forms --------------------------------------------------------

    @cached_property
    def mass_q(self):
        return self._scatter("Q", "Q", scalar_mass_local(self.Q.shapes))

    @cached_property
    def stiffness_q(self):
        return self._scatter("Q", "Q", _ein("tq,tqad,tqbd->tab", self._w, self._dphi, self._dphi))

    @cached_property
    def mass_x(self):
        return self._scatter("X", "X", vectorize_local(scalar_mass_local(self.Q.shapes), True, True))

    @cached_property
    def div_div(self):
        d = self._dphi  # divergence of basis (a, c) is d_c phi_a
        loc = _ein("tq,tqac,tqbe->tacbe", self._w, d, d).reshape(len(d), 6, 6)
        return self._scatter("X", "X", loc)

    @cached_property
    def curl_curl(self):
        d = self._dphi
        # scalar curl of phi_a e_0 is -d_y phi_a, of phi_a e_1 is d_x phi_a
        cv = np.stack([-d[..., 1], d[..., 0]], axis=-1)
        loc = _ein("tq,tqac,tqbe->tacbe", self._w, cv, cv).reshape(len(d), 6, 6)
        return self._scatter("X", "X", loc)

    @cached_property
    def mass_y(self):
        return self._scatter("Y", "Y", vectorize_local(scalar_mass_local(self.Y.shapes), True, True))

    @cached_property
    def stiffness_y(self):
        S = _ein("tq,tqad,tqbd->tab", self._w, self._dpsi, self._dpsi)
        return self._scatter("Y", "Y", vectorize_local(S, True, True))

    @cached_property
    def mass_m(self):
        return self._scatter("M", "M", scalar_mass_local(self.M.shapes))

    @cached_property
    def stiffness_m(self):
        return self.stiffness_q

    @cached_property
    def pressure_div(self):
        loc = _ein("tq,qi,tqbc->tibc", self._w, self._phi, self._dpsi)
        return self._scatter("M", "Y", loc.reshape(len(loc), 3, 8))

    @cached_property
    def grad_pressure(self):
        loc = _ein("tq,qa,tqjc->tacj", self._w, self._psi, self._dphi)
        return self._scatter("Y", "M", loc.reshape(len(loc), 8, 3))

    # -- coefficient-dependent forms ---------------------------------------------

    def trilinear(self, u: CompositeVelocity | Field) -> sp.csr_matrix:
        """Skew convection ``b(u; phi_j, phi_i)``.

        Uses ``b(u, v, w) = (u.grad v, w)/2 - (u.grad w, v)/2``, which equals
        ``(u.grad v, w) + (div u v, w)/2`` for continuous ``u`` vanishing on
        the boundary and stays antisymmetric for the discontinuous composite
        velocity.
        """
        self._check(u)
        uq = u.values()
        C = _ein("tq,tqd,tqbd,qa->tab", self._w, uq, self._dpsi, self._psi)
        S = 0.5 * (C - C.transpose(0, 2, 1))
        return self._scatter("Y", "Y", vectorize_local(S, True, True))

    def scalar_convection(self, u: CompositeVelocity | Field) -> sp.csr_matrix:
        """``(u . grad e, r)``: rows and cols Q_h."""
        self._check(u)
        loc = _ein("tq,tqd,tqbd,qa->tab", self._w, u.values(), self._dphi, self._phi)
        return self._scatter("Q", "Q", loc)

    def conv_eta(self, eta: Field) -> sp.csr_matrix:
        """``-(v eta, grad r)``: rows Q_h, cols Y_h."""
        self._check(eta)
        loc = -_ein("tq,qb,tq,tqac->tabc", self._w, self._psi, eta.values(), self._dphi)
        return self._scatter("Q", "Y", loc.reshape(len(loc), 3, 8))

    def sigma_eta(self, eta: Field) -> sp.csr_matrix:
        """``(w eta, grad r)``: rows Q_h, cols X_h."""
        self._check(eta)
        loc = _ein("tq,qb,tq,tqac->tabc", self._w, self._phi, eta.values(), self._dphi)
        return self._scatter("Q", "X", loc.reshape(len(loc), 3, 6))

    def conv_sigma(self, sigma: Field) -> sp.csr_matrix:
        """``-(v . sigma, div w)``: rows X_h, cols Y_h."""
        self._check(sigma)
        loc = -_ein("tq,qb,tqe,tqac->tacbe", self._w, self._psi, sigma.values(), self._dphi)
        return self._scatter("X", "Y", loc.reshape(len(loc), 6, 8))

    def eta_grad_eta(self, eta: Field) -> sp.csr_matrix:
        """``-(eta grad e, w)``: rows X_h, cols Q_h."""
        self._check(eta)
        loc = -_ein("tq,tq,tqbc,qa->tacb", self._w, eta.values(), self._dphi, self._phi)
        return self._scatter("X", "Q", loc.reshape(len(loc), 6, 3))

    def eta_grad_eta_u(self, eta: Field) -> sp.csr_matrix:
        """``(eta grad e, v)``: rows Y_h, cols Q_h."""
        self._check(eta)
        loc = _ein("tq,tq,tqbc,qa->tacb", self._w, eta.values(), self._dphi, self._psi)
        return self._scatter("Y", "Q", loc.reshape(len(loc), 8, 3))

    def sigma_div_sigma(self, sigma: Field) -> sp.csr_matrix:
        """``(sigma div s, v)``: rows Y_h, cols X_h."""
        self._check(sigma)
        loc = _ein("tq,tqc,tqbe,qa->tacbe", self._w, sigma.values(), self._dphi, self._psi)
        return self._scatter("Y", "X", loc.reshape(len(loc), 8, 6))

    def assemble(self, kind: FormKind | str, coeff=None) -> sp.csr_matrix:
        """Generic entry point; coefficient-dependent kinds need ``coeff``."""
        kind = FormKind(kind)
        attr = getattr(self, kind.value)
        if callable(attr):
            if coeff is None:
                raise ValueError(f"{kind.value} needs a coefficient field")
            return attr(coeff)
        if coeff is not None:
            raise ValueError(f"{kind.value} takes no coefficient")
        return attr

    # -- loads -------------------------------------------------------------

    def load(self, label: str, f, t: float) -> np.ndarray:
        """``(f(., t), phi_i)`` for a vectorised ``f(x, y, t)``."""
        space = self.space(label)
        xq = self.mesh.to_physical(self.rule.points)
        vals = np.asarray(f(xq[..., 0], xq[..., 1], t), dtype=float)
        shape = xq.shape[:2] + ((2,) if space.ncomp == 2 else ())
        return load_vector(space, np.broadcast_to(vals, shape))

    def load_values(self, label: str, values: np.ndarray) -> np.ndarray:
        return load_vector(self.space(label), values)


STEP1_BLOCKS = ("eta", "sigma", "u")


def coupled_system(
    asm: Assembler,
    *,
    alpha: float,
    mu: tuple[float, float, float],
    eta_c: Field,
    sigma_c: Field,
    u_c: CompositeVelocity,
    rhs_eta: np.ndarray,
    rhs_sigma: np.ndarray,
    rhs_u: np.ndarray,
    u_boundary=None,
) -> BlockSystem:
    """Monolithic system for ``(eta, sigma, u_hat)`` at the new level.

    ``alpha`` multiplies the mass terms of the discrete time derivative
    (``1/tau`` for backward Euler, ``3/(2 tau)`` for BDF2); ``eta_c``,
    ``sigma_c``, ``u_c`` are the lagged coefficient fields.
    """
    mu1, mu2, mu3 = mu
    sysm = BlockSystem(STEP1_BLOCKS, (asm.Q.dof_count, asm.X.dof_count, asm.Y.dof_count))
    sysm.add("eta", "eta", alpha * asm.mass_q + mu1 * asm.stiffness_q)
    sysm.add("eta", "sigma", asm.sigma_eta(eta_c))
    sysm.add("eta", "u", asm.conv_eta(eta_c))
    sysm.add("sigma", "sigma", (alpha + 1.0) * asm.mass_x + mu2 * (asm.div_div + asm.curl_curl))
    sysm.add("sigma", "eta", asm.eta_grad_eta(eta_c))
    sysm.add("sigma", "u", asm.conv_sigma(sigma_c))
    sysm.add("u", "u", alpha * asm.mass_y + mu3 * asm.stiffness_y + asm.trilinear(u_c))
    sysm.add("u", "eta", asm.eta_grad_eta_u(eta_c))
    sysm.add("u", "sigma", asm.sigma_div_sigma(sigma_c))
    sysm.add_rhs("eta", rhs_eta)
    sysm.add_rhs("sigma", rhs_sigma)
    sysm.add_rhs("u", rhs_u)
    sysm = apply_dirichlet(sysm, "sigma", asm.X, None)
    return apply_dirichlet(sysm, "u", asm.Y, u_boundary)


def composite_mass_action(asm: Assembler, u: CompositeVelocity) -> np.ndarray:
    """``(u, v_i)`` for every MINI basis function, including the gradient part."""
    return asm.mass_y @ u.hat.coeffs + asm.grad_pressure @ u.rho.coeffs


def assemble_step1_system(state, tau: float, mu, asm: Assembler, forcing=None, u_boundary=None):
    """First-order (backward Euler) Step-1 system from the level-``n`` state."""
    a = 1.0 / tau
    rhs_eta = a * (asm.mass_q @ state.eta.coeffs)
    rhs_sigma = a * (asm.mass_x @ state.sigma.coeffs)
    rhs_u = a * composite_mass_action(asm, state.u) + mu[2] * (asm.pressure_div.T @ state.s.coeffs)
    if forcing is not None:
        rhs_eta = rhs_eta + forcing[0]
        rhs_sigma = rhs_sigma + forcing[1]
        rhs_u = rhs_u + forcing[2]
    return coupled_system(
        asm,
        alpha=a,
        mu=tuple(mu),
        eta_c=state.eta,
        sigma_c=state.sigma,
        u_c=state.u,
        rhs_eta=rhs_eta,
        rhs_sigma=rhs_sigma,
        rhs_u=rhs_u,
        u_boundary=u_boundary,
    )
