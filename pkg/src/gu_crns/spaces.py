"""Discrete spaces: P1 scalars, constrained vector P1, MINI velocity, P1 pressure.

Vector spaces number their dofs component-adjacent: vertex ``v`` owns
``2v`` (x) and ``2v + 1`` (y); the MINI space appends two bubble dofs per
triangle, ``2V + 2k`` and ``2V + 2k + 1``.  Element-local vector dofs are
ordered ``2a + c`` for scalar basis function ``a`` and component ``c``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, boundary_vertex_info
from .quadrature import DEFAULT_DEGREE, QuadratureRule, rule_for_degree
from .sparse import LUFactor, ScatterPattern, SolverFailure


class SpaceKind(enum.Enum):
    SCALAR_P1 = "ScalarP1"
    VECTOR_P1 = "VectorP1"
    MINI_VELOCITY = "MiniVelocity"
    PRESSURE_P1 = "PressureP1"

    @property
    def ncomp(self) -> int:
        return 2 if self in (SpaceKind.VECTOR_P1, SpaceKind.MINI_VELOCITY) else 1

    @property
    def has_bubble(self) -> bool:
        return self is SpaceKind.MINI_VELOCITY


# ---------------------------------------------------------------------------
# reference basis


def p1b_values(bary: np.ndarray, bubble: bool) -> np.ndarray:
    """Scalar basis values ``(nq, 3 or 4)`` at barycentric points."""
    bary = np.atleast_2d(bary)
    if not bubble:
        return bary.copy()
    b = 27.0 * bary[:, 0] * bary[:, 1] * bary[:, 2]
    return np.column_stack([bary, b])


def p1b_gradients(mesh: TriMesh, bary: np.ndarray, bubble: bool, elements=None) -> np.ndarray:
    """Physical scalar basis gradients ``(T, nq, 3 or 4, 2)``."""
    bary = np.atleast_2d(bary)
    gl = mesh.grad_lambda if elements is None else mesh.grad_lambda[elements]
    nq = len(bary)
    g = np.broadcast_to(gl[:, None, :, :], (len(gl), nq, 3, 2))
    if not bubble:
        return np.array(g)
    l1, l2, l3 = bary[:, 0], bary[:, 1], bary[:, 2]
    coef = 27.0 * np.column_stack([l2 * l3, l1 * l3, l1 * l2])  # (nq, 3)
    gb = np.einsum("qa,tad->tqd", coef, gl)
    return np.concatenate([g, gb[:, :, None, :]], axis=2)


@dataclass(frozen=True, eq=False)
class ShapeTable:
    """Scalar basis values and gradients at the quadrature points of every element."""

    values: np.ndarray  # (nq, ns)
    grads: np.ndarray  # (T, nq, ns, 2)
    weights: np.ndarray  # (T, nq) = |T| w_q


def shape_table(mesh: TriMesh, rule: QuadratureRule, bubble: bool) -> ShapeTable:
    return ShapeTable(
        values=p1b_values(rule.points, bubble),
        grads=p1b_gradients(mesh, rule.points, bubble),
        weights=mesh.areas[:, None] * rule.weights[None, :],
    )


# ---------------------------------------------------------------------------
# spaces


@dataclass(frozen=True, eq=False)
class FESpace:
    kind: SpaceKind
    mesh: TriMesh
    dof_count: int
    cell_dofs: np.ndarray  # (T, nloc)
    essential_dofs: np.ndarray
    rule: QuadratureRule = field(repr=False)

    @property
    def ncomp(self) -> int:
        return self.kind.ncomp

    @property
    def n_scalar(self) -> int:
        return 4 if self.kind.has_bubble else 3

    @property
    def mean_zero(self) -> bool:
        return self.kind is SpaceKind.PRESSURE_P1

    @cached_property
    def shapes(self) -> ShapeTable:
        return shape_table(self.mesh, self.rule, self.kind.has_bubble)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return mass_matrix(self)

    @cached_property
    def _mass_lu(self) -> LUFactor:
        return LUFactor(self.mass)

    def essential_values(self, g, t=None) -> np.ndarray:
        """Prescribed values at :attr:`essential_dofs` from ``g(x, y)`` (vector valued)."""
        if self.ncomp == 1:
            raise ValueError(f"{self.kind.value} carries no essential dofs")
        v, c = np.divmod(self.essential_dofs, 2)
        if g is None:
            return np.zeros(len(v))
        xy = self.mesh.vertices[v]
        val = np.asarray(g(xy[:, 0], xy[:, 1]), dtype=float)
        return val[np.arange(len(v)), c]

    def dof_coordinates(self) -> np.ndarray:
        """Vertex coordinates of vertex dofs (bubble dofs map to centroids)."""
        if self.ncomp == 1:
            return self.mesh.vertices.copy()
        pts = np.repeat(self.mesh.vertices, 2, axis=0)
        if self.kind.has_bubble:
            pts = np.concatenate([pts, np.repeat(self.mesh.centroids(), 2, axis=0)])
        return pts


def _x_h_essential(mesh: TriMesh) -> np.ndarray:
    dofs = []
    for v, info in boundary_vertex_info(mesh).items():
        if len(info.sides) > 1:
            dofs += [2 * v, 2 * v + 1]
        elif info.sides & {"left", "right"}:
            dofs.append(2 * v)
        else:
            dofs.append(2 * v + 1)
    return np.array(sorted(dofs), dtype=np.int64)


def build_space(mesh: TriMesh, kind: SpaceKind | str, degree: int = DEFAULT_DEGREE) -> FESpace:
    """Construct one of the four discrete spaces on ``mesh``.

    ``VECTOR_P1`` is the flux space with vanishing normal trace; the MINI
    velocity space carries homogeneous-by-default Dirichlet dofs on every
    boundary vertex.
    """
    kind = SpaceKind(kind)
    V, T = mesh.n_vertices, mesh.n_triangles
    tri = mesh.triangles
    empty = np.zeros(0, dtype=np.int64)
    if kind.ncomp == 1:
        n, cell_dofs, ess = V, tri.copy(), empty
    else:
        vdofs = np.stack([2 * tri, 2 * tri + 1], axis=2).reshape(T, 6)
        if kind is SpaceKind.MINI_VELOCITY:
            k = np.arange(T)
            bdofs = np.column_stack([2 * V + 2 * k, 2 * V + 2 * k + 1])
            n, cell_dofs = 2 * V + 2 * T, np.concatenate([vdofs, bdofs], axis=1)
            bv = np.array(sorted(boundary_vertex_info(mesh)), dtype=np.int64)
            ess = np.sort(np.concatenate([2 * bv, 2 * bv + 1]))
        else:
            n, cell_dofs, ess = 2 * V, vdofs, _x_h_essential(mesh)
    cell_dofs.setflags(write=False)
    ess.setflags(write=False)
    return FESpace(kind, mesh, int(n), cell_dofs, ess, rule_for_degree(degree))


def eval_basis(space: FESpace, element: int, bary) -> tuple[np.ndarray, np.ndarray]:
    """Local basis values and physical gradients at one barycentric point.

    Scalar spaces return ``(values (3,), grads (3, 2))``; vector spaces
    return ``(values (nloc, 2), grads (nloc, 2, 2))`` with ``grads[i, c, d]``
    the ``d``-derivative of component ``c``.
    """
    bary = np.asarray(bary, dtype=float).reshape(1, 3)
    vals = p1b_values(bary, space.kind.has_bubble)[0]
    grads = p1b_gradients(space.mesh, bary, space.kind.has_bubble, elements=[element])[0, 0]
    if space.ncomp == 1:
        return vals, grads
    ns = len(vals)
    vv = np.zeros((2 * ns, 2))
    gg = np.zeros((2 * ns, 2, 2))
    for c in range(2):
        vv[c::2, c] = vals
        gg[c::2, c, :] = grads
    return vv, gg


# ---------------------------------------------------------------------------
# element-level helpers shared with the assembly module


def vectorize_local(S: np.ndarray, row_vec: bool, col_vec: bool, comps=None) -> np.ndarray:
    """Embed scalar local matrices into component-blocked ones.

    ``S`` has shape ``(T, nr, nc)`` (same block on the diagonal) or, with
    ``comps`` given, is a dict ``{(cr, cc): S_block}``.
    """
    if comps is None:
        T, nr, nc = S.shape
        if row_vec and col_vec:
            comps = {(0, 0): S, (1, 1): S}
        else:
            raise ValueError("component map required for mixed scalar/vector blocks")
    any_block = next(iter(comps.values()))
    T, nr, nc = any_block.shape
    R = 2 * nr if row_vec else nr
    C = 2 * nc if col_vec else nc
    out = np.zeros((T, R, C))
    for (cr, cc), blk in comps.items():
        rs = slice(cr, None, 2) if row_vec else slice(None)
        cs = slice(cc, None, 2) if col_vec else slice(None)
        out[:, rs, cs] += blk
    return out


def scalar_mass_local(tab: ShapeTable) -> np.ndarray:
    return np.einsum("tq,qa,qb->tab", tab.weights, tab.values, tab.values)


def mass_matrix(space: FESpace) -> sp.csr_matrix:
    S = scalar_mass_local(space.shapes)
    local = S if space.ncomp == 1 else vectorize_local(S, True, True)
    pat = ScatterPattern(space.cell_dofs, space.cell_dofs, (space.dof_count,) * 2)
    return pat.assemble(local)


def load_vector(space: FESpace, values: np.ndarray) -> np.ndarray:
    """``b_i = (f, phi_i)`` from ``f`` sampled at quadrature points.

    ``values`` is ``(T, nq)`` for scalar spaces and ``(T, nq, 2)`` for
    vector spaces.
    """
    tab = space.shapes
    if space.ncomp == 1:
        loc = np.einsum("tq,qa,tq->ta", tab.weights, tab.values, values)
    else:
        loc = np.einsum("tq,qa,tqc->tac", tab.weights, tab.values, values).reshape(
            len(values), -1
        )
    return np.bincount(space.cell_dofs.ravel(), weights=loc.ravel(), minlength=space.dof_count)


def quadrature_points(space: FESpace) -> np.ndarray:
    return space.mesh.to_physical(space.rule.points)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class Field:
    space: FESpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.space.dof_count,):
            raise ValueError(
                f"{self.space.kind.value} field needs {self.space.dof_count} coefficients, got {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, space: FESpace) -> "Field":
        return cls(space, np.zeros(space.dof_count))

    def _local(self) -> np.ndarray:
        return self.coeffs[self.space.cell_dofs]

    def values(self) -> np.ndarray:
        """Values at quadrature points: ``(T, nq)`` or ``(T, nq, 2)``."""
        tab = self.space.shapes
        loc = self._local()
        if self.space.ncomp == 1:
            return loc @ tab.values.T
        loc = loc.reshape(len(loc), -1, 2)
        return np.einsum("qa,tac->tqc", tab.values, loc)

    def gradients(self) -> np.ndarray:
        """``(T, nq, 2)`` for scalars, ``(T, nq, 2, 2)`` as ``[..., comp, deriv]`` for vectors."""
        tab = self.space.shapes
        loc = self._local()
        if self.space.ncomp == 1:
            return np.einsum("tqad,ta->tqd", tab.grads, loc)
        loc = loc.reshape(len(loc), -1, 2)
        return np.einsum("tqad,tac->tqcd", tab.grads, loc)

    def divergence(self) -> np.ndarray:
        g = self.gradients()
        return g[..., 0, 0] + g[..., 1, 1]

    def integral(self) -> float:
        if self.space.ncomp != 1:
            raise ValueError("integral is defined for scalar fields")
        return float(np.sum(self.space.shapes.weights * self.values()))

    def l2_norm(self) -> float:
        return float(np.sqrt(max(self.coeffs @ (self.space.mass @ self.coeffs), 0.0)))

    def vertex_values(self) -> np.ndarray:
        V = self.space.mesh.n_vertices
        if self.space.ncomp == 1:
            return self.coeffs[:V].copy()
        return self.coeffs[: 2 * V].reshape(V, 2).copy()

    def __add__(self, other: "Field") -> "Field":
        return Field(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.space, self.coeffs - other.coeffs)

    def __rmul__(self, a: float) -> "Field":
        return Field(self.space, a * self.coeffs)

    def __mul__(self, a: float) -> "Field":
        return Field(self.space, a * self.coeffs)


@dataclass(frozen=True, eq=False)
class CompositeVelocity:
    """``u = hat + grad(rho)``; the gradient part is constant per element."""

    hat: Field
    rho: Field

    def values(self) -> np.ndarray:
        return self.hat.values() + self.rho.gradients()

    def gradients(self) -> np.ndarray:
        # grad(grad rho) vanishes inside each element
        return self.hat.gradients()

    def divergence(self) -> np.ndarray:
        return self.hat.divergence()

    def l2_norm(self) -> float:
        tab = self.hat.space.shapes
        v = self.values()
        return float(np.sqrt(np.sum(tab.weights * np.sum(v * v, axis=-1))))

    def vertex_values(self) -> np.ndarray:
        """Visualisation sample: ``hat`` at vertices plus area-averaged element gradients."""
        mesh = self.hat.space.mesh
        g = np.einsum("tad,ta->td", mesh.grad_lambda, self.rho.coeffs[mesh.triangles])
        w = np.repeat(mesh.areas, 3)
        idx = mesh.triangles.ravel()
        acc = np.stack(
            [np.bincount(idx, weights=w * np.repeat(g[:, d], 3), minlength=mesh.n_vertices) for d in range(2)],
            axis=1,
        )
        wsum = np.bincount(idx, weights=w, minlength=mesh.n_vertices)
        return self.hat.vertex_values() + acc / wsum[:, None]

    def __add__(self, other: "CompositeVelocity") -> "CompositeVelocity":
        return CompositeVelocity(self.hat + other.hat, self.rho + other.rho)

    def __sub__(self, other: "CompositeVelocity") -> "CompositeVelocity":
        return CompositeVelocity(self.hat - other.hat, self.rho - other.rho)

    def __rmul__(self, a: float) -> "CompositeVelocity":
        return CompositeVelocity(a * self.hat, a * self.rho)

    __mul__ = __rmul__


# ---------------------------------------------------------------------------
# projection and essential conditions


def _sample(space: FESpace, f) -> np.ndarray:
    xq = quadrature_points(space)
    vals = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float)
    shape = xq.shape[:2] if space.ncomp == 1 else xq.shape[:2] + (2,)
    return np.broadcast_to(vals, shape)


def l2_project(space: FESpace, f, g=None, constrained: bool = True) -> Field:
    """L2 projection of ``f(x, y)`` onto ``space``.

    With ``constrained`` the projection is taken in the affine subspace whose
    essential dofs equal ``g`` (zero when ``g`` is None): the mass system is
    solved on the free dofs only.  PressureP1 projections are shifted to
    zero mean.
    """
    b = load_vector(space, _sample(space, f))
    M = space.mass
    ess = space.essential_dofs if constrained else np.zeros(0, dtype=np.int64)
    if len(ess) == 0:
        c = space._mass_lu.solve(b)
    else:
        c = np.zeros(space.dof_count)
        c[ess] = space.essential_values(g)
        free = np.setdiff1d(np.arange(space.dof_count), ess)
        Mff = M[free][:, free]
        rhs = b[free] - M[free][:, ess] @ c[ess]
        try:
            c[free] = LUFactor(Mff).solve(rhs)
        except SolverFailure as exc:
            raise SolverFailure(f"L2 projection onto {space.kind.value}: {exc}") from exc
    if space.mean_zero:
        c = c - np.sum(M @ c) / space.mesh.area
    return Field(space, c)


def apply_dirichlet(system, block: str, space: FESpace, g=None):
    """Constrain the essential dofs of ``block`` to ``g`` (callable of x, y, or array).

    Returns a new system; constrained rows become identity rows and the
    corresponding columns are eliminated into the right-hand side.
    """
    if callable(g) or g is None:
        vals = space.essential_values(g)
    else:
        vals = np.broadcast_to(np.asarray(g, dtype=float), space.essential_dofs.shape)
    return system.with_constraint(block, space.essential_dofs, vals)
