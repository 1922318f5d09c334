import numpy as np
import pytest
import scipy.sparse as sp

from gu_crns import SolverFailure, build_rect_mesh, cg_solve, from_triplets, gmres_solve, lu_solve
from gu_crns.sparse import BlockSystem, LUFactor, ScatterPattern


def test_duplicates_summed():
    A = from_triplets(1, 1, [(0, 0, 1.0), (0, 0, 2.0)])
    assert A.nnz == 1 and A[0, 0] == 3.0


def test_empty_triplets():
    A = from_triplets(3, 3, [])
    assert A.nnz == 0
    np.testing.assert_array_equal(A @ np.ones(3), 0.0)


def test_csr_invariants_and_matvec(rng):
    ent = [(int(i), int(j), float(v)) for i, j, v in zip(rng.integers(0, 8, 40), rng.integers(0, 8, 40), rng.normal(size=40))]
    A = from_triplets(8, 8, ent)
    D = np.zeros((8, 8))
    for i, j, v in ent:
        D[i, j] += v
    x = rng.normal(size=8)
    np.testing.assert_allclose(A @ x, D @ x, atol=1e-13)
    assert len(A.indptr) == 9 and A.indptr[0] == 0 and A.indptr[-1] == A.nnz
    for r in range(8):
        cols = A.indices[A.indptr[r] : A.indptr[r + 1]]
        assert np.all(np.diff(cols) > 0)
    y, a = rng.normal(size=8), 1.7
    np.testing.assert_allclose(A @ (a * x + y), a * (A @ x) + A @ y, atol=1e-13)
    assert abs((A @ x) @ y - x @ (A.T @ y)) <= 1e-12


def test_out_of_range():
    with pytest.raises(ValueError):
        from_triplets(2, 2, [(2, 0, 1.0)])


def test_lu_hand_examples():
    b = np.array([3.0, 4.0])
    np.testing.assert_allclose(lu_solve(sp.identity(2, format="csr"), b), b)
    np.testing.assert_allclose(lu_solve(sp.csr_matrix([[2.0, 1.0], [1.0, 3.0]]), b), [1.0, 1.0], atol=1e-14)


def test_lu_singular_reported():
    with pytest.raises(SolverFailure):
        lu_solve(sp.csr_matrix([[1.0, 0.0], [0.0, 0.0]]), np.ones(2))


def _spd(rng, n):
    B = rng.normal(size=(n, n))
    return B @ B.T + n * np.eye(n)


def test_cg_identity_one_iteration(rng):
    x, it = cg_solve(sp.identity(10, format="csr"), rng.normal(size=10))
    assert it == 1


def test_cg_maxit_failure():
    m = build_rect_mesh(1, 1, 16, 16)
    from gu_crns.assembly import Assembler

    K = Assembler(m).stiffness_m + sp.identity(m.n_vertices) * 1e-3
    with pytest.raises(SolverFailure) as exc:
        cg_solve(K, np.ones(m.n_vertices), maxit=1)
    assert exc.value.iterations == 1 and exc.value.residual > 0


def test_cg_on_shifted_poisson_matches_lu():
    from gu_crns.assembly import Assembler

    a = Assembler(build_rect_mesh(1, 1, 12, 12))
    K, m = a.stiffness_m, a.mass_m @ np.ones(a.M.dof_count)
    A = (K + sp.csr_matrix(np.outer(m, m))).tocsr()
    xy = a.mesh.vertices
    b = a.mass_m @ (np.cos(np.pi * xy[:, 0]) * np.cos(np.pi * xy[:, 1]))
    tol = 1e-10
    x_cg, _ = cg_solve(A, b, tol=tol)
    x_lu = lu_solve(A, b)
    assert np.linalg.norm(x_cg - x_lu) <= 10 * tol * np.linalg.norm(x_lu)


def test_gmres_identity_and_convection_diffusion(rng):
    _, it = gmres_solve(sp.identity(7, format="csr"), rng.normal(size=7))
    assert it == 1
    n = 40
    h = 1 / (n + 1)
    A = sp.diags([-1 / h**2 - 5 / h, 2 / h**2 + 1, -1 / h**2 + 5 / h], [-1, 0, 1], shape=(n, n), format="csr")
    b = rng.normal(size=n)
    x, _ = gmres_solve(A, b, tol=1e-12)
    ref = lu_solve(A, b)
    assert np.linalg.norm(x - ref) <= 10 * 1e-10 * np.linalg.norm(ref)


def test_gmres_incompatible_singular():
    A = sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SolverFailure):
        gmres_solve(A, np.array([1.0, -1.0]), maxit=20)


@pytest.mark.parametrize("n", [5, 20, 50])
def test_solvers_match_dense(rng, n):
    A = _spd(rng, n)
    N = rng.normal(size=(n, n)) + n * np.eye(n)
    b = rng.normal(size=n)
    for mat, solvers in ((A, ("lu", "cg", "gmres")), (N, ("lu", "gmres"))):
        ref = np.linalg.solve(mat, b)
        S = sp.csr_matrix(mat)
        for s in solvers:
            x = {"lu": lambda: lu_solve(S, b), "cg": lambda: cg_solve(S, b, tol=1e-13)[0],
                 "gmres": lambda: gmres_solve(S, b, tol=1e-13)[0]}[s]()
            assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref), s


def test_lu_factor_reuse(rng):
    A = sp.csr_matrix(_spd(rng, 12))
    f = LUFactor(A)
    for _ in range(3):
        b = rng.normal(size=12)
        np.testing.assert_allclose(A @ f.solve(b), b, atol=1e-10)


def test_scatter_pattern_against_loop(rng):
    cell = np.array([[0, 1, 2], [1, 3, 2]])
    loc = rng.normal(size=(2, 3, 3))
    A = ScatterPattern(cell, cell, (4, 4)).assemble(loc).toarray()
    D = np.zeros((4, 4))
    for k in range(2):
        D[np.ix_(cell[k], cell[k])] += loc[k]
    np.testing.assert_allclose(A, D, atol=1e-15)


def test_block_system_against_dense(rng):
    A11, A12, A21, A22 = (rng.normal(size=s) for s in [(3, 3), (3, 2), (2, 3), (2, 2)])
    bs = BlockSystem(("a", "b"), (3, 2))
    bs.add("a", "a", sp.csr_matrix(A11 + 5 * np.eye(3)))
    bs.add("a", "b", sp.csr_matrix(A12))
    bs.add("b", "a", sp.csr_matrix(A21))
    bs.add("b", "b", sp.csr_matrix(A22 + 5 * np.eye(2)))
    D = np.block([[A11 + 5 * np.eye(3), A12], [A21, A22 + 5 * np.eye(2)]])
    np.testing.assert_allclose(bs.matrix().toarray(), D)
    b = rng.normal(size=5)
    bs.add_rhs("a", b[:3])
    bs.add_rhs("b", b[3:])
    # constrain b[1] = 0.5: dense oracle by substitution
    cs = bs.with_constraint("b", [1], [0.5])
    out = cs.solve()
    free = [0, 1, 2, 3]
    ref = np.linalg.solve(D[np.ix_(free, free)], b[free] - D[free, 4] * 0.5)
    np.testing.assert_allclose(np.concatenate([out["a"], out["b"][:1]]), ref, atol=1e-12)
    assert out["b"][1] == 0.5
    with pytest.raises(ValueError):
        bs.add("a", "b", sp.csr_matrix((2, 2)))
