"""Manufactured solutions, error norms, convergence sweeps and stock initial data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import build_rect_mesh
from .quadrature import QuadratureRule
from .scheme import GaugeUzawaSolver, SchemeConfig
from .spaces import CompositeVelocity, Field

logger = logging.getLogger(__name__)

PI = np.pi


def _tv(f, t, k: int = 1):
    """``f(t)`` with ``k`` trailing unit axes so it scales vector/matrix fields."""
    a = np.asarray(f(t))
    return a.reshape(a.shape + (1,) * k)


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact trigonometric solution on the unit square and matching forcing.

    All closures take ``(x, y, t)`` arrays; vector fields return a trailing
    axis of length two.
    """

    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0

    # exact fields: fixed spatial profiles times sin(t) --------------------

    @staticmethod
    def _eta_x(x, y):
        return np.cos(2 * PI * x) * np.cos(PI * y)

    @staticmethod
    def _c_x(x, y):
        return np.cos(PI * x) * np.cos(2 * PI * y)

    @staticmethod
    def _sigma_x(x, y):
        return np.stack(
            [-PI * np.sin(PI * x) * np.cos(2 * PI * y), -2 * PI * np.cos(PI * x) * np.sin(2 * PI * y)],
            axis=-1,
        )

    @staticmethod
    def _u_x(x, y):
        return np.stack([np.sin(PI * x) * np.cos(PI * y), -np.cos(PI * x) * np.sin(PI * y)], axis=-1)

    def eta(self, x, y, t):
        return self._eta_x(x, y) * np.sin(t)

    def c(self, x, y, t):
        return self._c_x(x, y) * np.sin(t)

    def sigma(self, x, y, t):
        return self._sigma_x(x, y) * _tv(np.sin, t)

    def u(self, x, y, t):
        return self._u_x(x, y) * _tv(np.sin, t)

    def p(self, x, y, t):
        return np.cos(PI * x) * np.cos(PI * y) * np.sin(t)

    # derivatives --------------------------------------------------------------

    @staticmethod
    def _grad_eta(x, y, t):
        st = np.sin(t)
        return np.stack(
            [
                -2 * PI * np.sin(2 * PI * x) * np.cos(PI * y) * st,
                -PI * np.cos(2 * PI * x) * np.sin(PI * y) * st,
            ],
            axis=-1,
        )

    @staticmethod
    def _grad_u(x, y, t):
        """``[..., i, j] = d_j u_i``."""
        sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
        return PI * _tv(np.sin, t, 2) * np.stack(
            [np.stack([cx * cy, -sx * sy], -1), np.stack([sx * sy, -cx * cy], -1)], axis=-2
        )

    @staticmethod
    def _grad_sigma(x, y, t):
        """``[..., i, j] = d_j sigma_i``."""
        a = PI**2 * _tv(np.sin, t, 2)
        cx, sx = np.cos(PI * x), np.sin(PI * x)
        c2y, s2y = np.cos(2 * PI * y), np.sin(2 * PI * y)
        return a * np.stack(
            [np.stack([-cx * c2y, 2 * sx * s2y], -1), np.stack([2 * sx * s2y, -4 * cx * c2y], -1)],
            axis=-2,
        )

    # forcing ---------------------------------------------------------------------
    # laplacians: eta, c and sigma are eigenfunctions with eigenvalue -5 pi^2,
    # u with -2 pi^2

    def f_eta(self, x, y, t):
        """``eta_t + u.grad eta - mu1 lap eta - div(eta sigma)`` (u is solenoidal)."""
        eta = self.eta(x, y, t)
        ge = self._grad_eta(x, y, t)
        sig = self.sigma(x, y, t)
        div_sigma = -5 * PI**2 * self.c(x, y, t)
        eta_t = self._eta_x(x, y) * np.cos(t)
        return (
            eta_t
            + np.sum(self.u(x, y, t) * ge, axis=-1)
            + self.mu1 * 5 * PI**2 * eta
            - (np.sum(ge * sig, axis=-1) + eta * div_sigma)
        )

    def f_sigma(self, x, y, t):
        """``sigma_t + grad(u.sigma) - mu2 lap sigma + sigma - eta grad eta``."""
        u, gu = self.u(x, y, t), self._grad_u(x, y, t)
        sig, gs = self.sigma(x, y, t), self._grad_sigma(x, y, t)
        grad_us = np.einsum("...ij,...i->...j", gu, sig) + np.einsum("...ij,...i->...j", gs, u)
        sigma_t = self._sigma_x(x, y) * _tv(np.cos, t)
        eta = self.eta(x, y, t)
        return (
            sigma_t
            + grad_us
            + self.mu2 * 5 * PI**2 * sig
            + sig
            - eta[..., None] * self._grad_eta(x, y, t)
        )

    def f_u(self, x, y, t):
        """``u_t + (u.grad)u - mu3 lap u + grad p + eta grad eta + (div sigma) sigma``."""
        u, gu = self.u(x, y, t), self._grad_u(x, y, t)
        u_t = self._u_x(x, y) * _tv(np.cos, t)
        grad_p = -PI * _tv(np.sin, t) * np.stack(
            [np.sin(PI * x) * np.cos(PI * y), np.cos(PI * x) * np.sin(PI * y)], axis=-1
        )
        div_sigma = -5 * PI**2 * self.c(x, y, t)
        return (
            u_t
            + np.einsum("...ij,...j->...i", gu, u)
            + self.mu3 * 2 * PI**2 * u
            + grad_p
            + self.eta(x, y, t)[..., None] * self._grad_eta(x, y, t)
            + div_sigma[..., None] * self.sigma(x, y, t)
        )

    def f_c(self, x, y, t):
        """``c_t + u.sigma - mu2 div sigma + c - eta^2 / 2``."""
        c_t = self._c_x(x, y) * np.cos(t)
        c = self.c(x, y, t)
        return (
            c_t
            + np.sum(self.u(x, y, t) * self.sigma(x, y, t), axis=-1)
            + self.mu2 * 5 * PI**2 * c
            + c
            - 0.5 * self.eta(x, y, t) ** 2
        )


def manufactured_case(mu1: float = 1.0, mu2: float = 1.0, mu3: float = 1.0) -> ManufacturedCase:
    return ManufacturedCase(mu1, mu2, mu3)


# ---------------------------------------------------------------------------
# errors


def _quad_xy(mesh, rule: QuadratureRule):
    xq = mesh.to_physical(rule.points)
    return xq[..., 0], xq[..., 1], mesh.areas[:, None] * rule.weights[None, :]


def l2_error(field, exact, t: float, mean_shift: bool = False) -> float:
    """``|exact(., t) - field|_{L2}`` by quadrature on the field's mesh.

    ``field`` is a :class:`Field` or :class:`CompositeVelocity`; with
    ``mean_shift`` both sides are reduced to zero mean first.
    """
    space = field.hat.space if isinstance(field, CompositeVelocity) else field.space
    x, y, w = _quad_xy(space.mesh, space.rule)
    num = field.values()
    ex = np.asarray(exact(x, y, t), dtype=float)
    ex = np.broadcast_to(ex, num.shape)
    if mean_shift:
        area = w.sum()
        num = num - np.sum(w * num) / area
        ex = ex - np.sum(w * ex) / area
    d = ex - num
    if d.ndim == 3:
        d2 = np.sum(d * d, axis=-1)
    else:
        d2 = d * d
    return float(np.sqrt(np.sum(w * d2)))


def l2_difference(a, b) -> float:
    """L2 norm of the difference of two discrete fields on the same mesh."""
    space = a.hat.space if isinstance(a, CompositeVelocity) else a.space
    w = space.shapes.weights
    d = a.values() - b.values()
    d2 = np.sum(d * d, axis=-1) if d.ndim == 3 else d * d
    return float(np.sqrt(np.sum(w * d2)))


def observed_rates(errors, ratio: float = 2.0) -> list[float]:
    e = np.asarray(errors, dtype=float)
    return [float(np.log(e[i] / e[i + 1]) / np.log(ratio)) for i in range(len(e) - 1)]


VARIABLES = ("u", "p", "eta", "c", "sigma")


@dataclass
class ErrorReport:
    axis: str
    levels: list = field(default_factory=list)  # (h, tau) per level
    errors: dict = field(default_factory=lambda: {v: [] for v in VARIABLES})
    max_div_residual: float = 0.0
    note: str = ""

    @property
    def rates(self) -> dict:
        return {v: observed_rates(e) for v, e in self.errors.items()}

    def rows(self):
        """``(axis, level, h, tau, var, error, rate)`` rows; rate empty on the first level."""
        rates = self.rates
        for k, (h, tau) in enumerate(self.levels):
            for v in VARIABLES:
                r = rates[v][k - 1] if k > 0 else None
                yield (self.axis, k, h, tau, v, self.errors[v][k], r)


def n_steps_for(T: float, tau: float) -> int:
    """Number of uniform steps reaching at least ``T``."""
    n = T / tau
    return max(1, int(round(n)) if abs(n - round(n)) < 1e-9 * max(1.0, n) else math.ceil(n))


def run_manufactured(n: int, tau: float, T: float, order: int = 1, case=None, solver: str = "direct",
                     on_step=None, c_recovery: str = "gradient"):
    """Forced run on the unit square with ``n x n`` cells; returns ``(solver, final state)``."""
    case = case or manufactured_case()
    mesh = build_rect_mesh(1.0, 1.0, n, n)
    cfg = SchemeConfig(tau=tau, mu1=case.mu1, mu2=case.mu2, mu3=case.mu3, order=order, solver=solver,
                       c_recovery=c_recovery)
    gu = GaugeUzawaSolver(mesh, cfg)
    state = gu.init_state(
        lambda x, y: case.eta(x, y, 0.0),
        lambda x, y: case.sigma(x, y, 0.0),
        lambda x, y: case.u(x, y, 0.0),
        c0=lambda x, y: case.c(x, y, 0.0),
        p0=lambda x, y: case.p(x, y, 0.0),
        u_boundary=lambda x, y: case.u(x, y, 0.0),
    )
    for state in gu.run(state, n_steps_for(T, tau), forcing=case):
        if on_step is not None:
            on_step(gu, state)
    return gu, state


def final_errors(state, case, t=None) -> dict:
    t = state.t if t is None else t
    return {
        "u": l2_error(state.u, case.u, t),
        "p": l2_error(state.p, case.p, t, mean_shift=True),
        "eta": l2_error(state.eta, case.eta, t),
        "c": l2_error(state.c, case.c, t),
        "sigma": l2_error(state.sigma, case.sigma, t),
    }


def convergence_sweep(axis: str, levels, *, n: int | None = None, tau: float | None = None,
                      T: float = 1.0, order: int = 1, case=None, solver: str = "direct") -> ErrorReport:
    """Manufactured-solution errors over a refinement sequence.

    ``axis='time'`` varies ``tau`` over ``levels`` on a fixed ``n x n`` mesh;
    ``axis='space'`` varies the cell count ``n`` over ``levels`` at fixed ``tau``.
    """
    case = case or manufactured_case()
    if axis not in ("time", "space"):
        raise ValueError(f"axis must be 'time' or 'space', got {axis!r}")
    report = ErrorReport(axis=axis, note=f"order={order} T={T}")
    for lev in levels:
        nn, tt = (n, lev) if axis == "time" else (lev, tau)
        divs = []

        def watch(gu, st):
            divs.append(gu.div_residual(st.u))

        try:
            gu, state = run_manufactured(int(nn), float(tt), T, order, case, solver, on_step=watch)
        except Exception as exc:
            raise RuntimeError(f"{axis} sweep failed at level {lev}: {exc}") from exc
        errs = final_errors(state, case)
        report.levels.append((gu.mesh.h, float(tt)))
        for v in VARIABLES:
            report.errors[v].append(errs[v])
        report.max_div_residual = max(report.max_div_residual, max(divs, default=0.0))
        logger.info("%s level %s: %s", axis, lev, {k: f"{e:.3e}" for k, e in errs.items()})
    return report


def self_convergence(taus, n: int, T: float, order: int = 2, case=None) -> dict:
    """Temporal self-convergence orders from three successively halved steps.

    Returns per-variable ``log2(|X_tau - X_tau/2| / |X_tau/2 - X_tau/4|)``.
    """
    if len(taus) != 3:
        raise ValueError("self-convergence needs exactly three step sizes")
    case = case or manufactured_case()
    finals = [run_manufactured(n, t, T, order, case)[1] for t in taus]
    out = {}
    for name in ("u", "eta", "sigma", "p", "c"):
        a, b, c = (getattr(s, name) for s in finals)
        d1, d2 = l2_difference(a, b), l2_difference(b, c)
        out[name] = float(np.log2(d1 / d2))
    return out


# ---------------------------------------------------------------------------
# stock initial data


@dataclass(frozen=True)
class InitialData:
    name: str
    lx: float
    ly: float
    eta: object
    c: object
    sigma: object
    u: object
    p: object


def _zero_vec(x, y):
    return np.zeros(np.shape(x) + (2,))


def _zero(x, y):
    return np.zeros(np.shape(x))


def _stability_data():
    def eta(x, y):
        return np.cos(2 * PI * x) + np.sin(2 * PI * y) + 3

    def c(x, y):
        return np.cos(2 * PI * x) + np.sin(2 * PI * y) - 2 * PI * y + 9

    def sigma(x, y):
        return 2 * PI * np.stack([-np.sin(2 * PI * x), np.cos(2 * PI * y) - 1], axis=-1)

    def u(x, y):
        return np.stack(
            [
                np.sin(2 * PI * y) * (-np.cos(2 * PI * x + PI) - 1),
                np.sin(2 * PI * x) * (np.cos(2 * PI * y + PI) + 1),
            ],
            axis=-1,
        )

    def p(x, y):
        return np.cos(2 * PI * x) + np.sin(2 * PI * y)

    return InitialData("stability", 1.0, 1.0, eta, c, sigma, u, p)


def _repulsion_data():
    def bump(x, y):
        return x * y * (2 - x) * (2 - y)

    def eta(x, y):
        return -10 * bump(x, y) * np.exp(-10 * (y - 1) ** 2 - 10 * (x - 1) ** 2) + 10.0001

    def c(x, y):
        return 200 * bump(x, y) * np.exp(-30 * (y - 1) ** 2 - 30 * (x - 1) ** 2) + 0.0001

    def sigma(x, y):
        e = np.exp(-30 * (y - 1) ** 2 - 30 * (x - 1) ** 2)
        gx = y * (2 - y) * (2 - 2 * x) - 60 * (x - 1) * bump(x, y)
        gy = x * (2 - x) * (2 - 2 * y) - 60 * (y - 1) * bump(x, y)
        return 200 * e[..., None] * np.stack([gx, gy], axis=-1)

    return InitialData("repulsion", 1.0, 1.0, eta, c, sigma, _zero_vec, _zero)


def _plume_data():
    def eta(x, y):
        return 70 * (
            np.exp(-8 * (x - 0.4) ** 2 - 8 * (y - 1) ** 2)
            + np.exp(-8 * (x - 0.7) ** 2 - 8 * (y - 1) ** 2)
            + np.exp(-8 * (x - 1.5) ** 2 - 8 * (y - 1) ** 2)
        )

    def c(x, y):
        return 30 * np.exp(-4 * (x - 1) ** 2 - 4 * (y - 0.5) ** 2)

    def sigma(x, y):
        cc = c(x, y)
        return np.stack([-8 * (x - 1) * cc, -8 * (y - 0.5) * cc], axis=-1)

    return InitialData("plume", 2.0, 1.0, eta, c, sigma, _zero_vec, _zero)


_STOCK = {"stability": _stability_data, "repulsion": _repulsion_data, "plume": _plume_data}


def stock_initial_data(case: str) -> InitialData:
    try:
        return _STOCK[case]()
    except KeyError:
        raise ValueError(f"unknown initial data {case!r}; expected one of {sorted(_STOCK)}") from None
