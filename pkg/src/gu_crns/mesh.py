"""Structured triangulations of axis-aligned rectangles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIDES = ("left", "right", "bottom", "top")
SIDE_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation of ``[0, lx] x [0, ly]``.

    Triangles are stored counter-clockwise.  ``grad_lambda[k, a]`` is the
    (constant) gradient of the barycentric coordinate of local vertex ``a``
    on triangle ``k``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_sides: tuple
    boundary_normals: np.ndarray
    lx: float
    ly: float
    h: float
    areas: np.ndarray = field(init=False, repr=False)
    grad_lambda: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = self.vertices[self.triangles]  # (T, 3, 2)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0.0):
            raise ValueError("triangles must have positive counter-clockwise orientation")
        # grad(lambda_a) = rot90(opposite edge) / (2|T|)
        opp = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        grads = np.stack([-opp[..., 1], opp[..., 0]], axis=-1) / det[:, None, None]
        object.__setattr__(self, "areas", _frozen(0.5 * det))
        object.__setattr__(self, "grad_lambda", _frozen(grads))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def to_physical(self, bary: np.ndarray) -> np.ndarray:
        """Map barycentric points ``(nq, 3)`` to physical points ``(T, nq, 2)``."""
        return np.einsum("qa,tad->tqd", bary, self.vertices[self.triangles])


def build_rect_mesh(lx: float, ly: float, nx: int, ny: int) -> TriMesh:
    """Uniform ``nx`` by ``ny`` grid with every cell cut along its rising diagonal."""
    if not (lx > 0 and ly > 0):
        raise ValueError(f"rectangle dimensions must be positive, got lx={lx}, ly={ly}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be integers >= 1, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    edges, sides = [], []
    for side, run in (
        ("bottom", idx[0, :]),
        ("right", idx[:, -1]),
        ("top", idx[-1, ::-1]),
        ("left", idx[::-1, 0]),
    ):
        for a, b in zip(run[:-1], run[1:]):
            edges.append((a, b))
            sides.append(side)
    normals = np.array([SIDE_NORMALS[s] for s in sides])

    h = float(np.hypot(lx / nx, ly / ny))
    return TriMesh(
        vertices=_frozen(vertices),
        triangles=_frozen(triangles),
        boundary_edges=_frozen(np.array(edges, dtype=np.int64)),
        boundary_sides=tuple(sides),
        boundary_normals=_frozen(normals),
        lx=float(lx),
        ly=float(ly),
        h=h,
    )


@dataclass(frozen=True)
class BoundaryVertex:
    sides: frozenset
    normals: tuple


def boundary_vertex_info(mesh: TriMesh) -> dict[int, BoundaryVertex]:
    """Side membership of every boundary vertex; corners carry two sides."""
    tags: dict[int, set] = {}
    for (a, b), side in zip(mesh.boundary_edges, mesh.boundary_sides):
        tags.setdefault(int(a), set()).add(side)
        tags.setdefault(int(b), set()).add(side)
    return {
        v: BoundaryVertex(
            sides=frozenset(s),
            normals=tuple(SIDE_NORMALS[t] for t in SIDES if t in s),
        )
        for v, s in sorted(tags.items())
    }
