import numpy as np
import pytest
from scipy.linalg import cho_factor

from brute_force import kappa_rays, monomial_basis, pair_matrix, rect_rule, tensor_lagrange
from hpfrac.assembly import (AssemblyError, SymmetricDenseMatrix, assemble, assemble_rhs, assemble_system,
                             dump_system, load_system)
from hpfrac.geometry import Polygon, unit_square
from hpfrac.kernel import KernelParams
from hpfrac.mesh import TRIVIAL, MacroElement, MeshParams, preset_mesh, refine
from hpfrac.pairs import QuadConfig
from hpfrac.space import HpSpace
from hpfrac.symmetry import build_reduction, invariant, mesh_symmetries


def one(x):
    return np.ones(len(x))


@pytest.fixture(scope="module")
def fan2():
    space = HpSpace(preset_mesh("square-fan", 0.5, 2), 2)
    A = assemble(space, KernelParams(0.5))
    return space, A


def test_storage_symmetry_and_spd(fan2):
    space, A = fan2
    M = A.to_dense()
    assert M.shape == (space.N, space.N)
    assert np.array_equal(M, M.T)
    assert np.linalg.eigvalsh(M)[0] > 0
    cho_factor(M)
    x = np.random.default_rng(0).standard_normal(space.N)
    assert np.allclose(A.matvec(x), M @ x, rtol=1e-13, atol=1e-14)
    i, j = 3, 17
    assert A[i, j] == A[j, i] == M[i, j]


def test_entries_stable_under_richer_quadrature(fan2):
    space, A = fan2
    M = A.to_dense()
    rich = assemble(space, KernelParams(0.5), QuadConfig(gauss_order=8, sing_order=7, grading_levels=20))
    R = rich.to_dense()
    rng = np.random.default_rng(1)
    scale = np.abs(M).max()
    for _ in range(10):
        i, j = rng.integers(space.N, size=2)
        assert abs(R[j, i] - M[i, j]) <= 1e-8 * scale


def test_coercivity_witness(fan2):
    space, A = fan2
    assert A.matvec(np.zeros(space.N)) @ np.zeros(space.N) == 0
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = rng.standard_normal(space.N)
        assert v @ A.matvec(v) > 0


def test_deterministic_and_thread_independent(fan2):
    space, A = fan2
    again = assemble(space, KernelParams(0.5))
    threaded = assemble(space, KernelParams(0.5), threads=2)
    assert np.array_equal(A.to_dense(), again.to_dense())
    assert np.array_equal(A.to_dense(), threaded.to_dense())


def test_symmetry_reduction_is_exact():
    space = HpSpace(preset_mesh("lshape-fan", 0.5, 2), 2)
    kp = KernelParams(0.4)
    full = assemble_system(space, kp, one, symmetry=False)
    red = assemble_system(space, kp, one, symmetry=True)
    assert red.A.N < full.A.N
    yf = np.linalg.solve(full.A.to_dense(), full.b)
    yr = np.linalg.solve(red.A.to_dense(), red.b)
    assert red.b @ yr == pytest.approx(full.b @ yf, rel=1e-12)
    assert np.allclose(red.reduction.expand(yr), yf, rtol=1e-9, atol=1e-12 * np.abs(yf).max())
    # a load without the mirror symmetry disables the reduction
    skew = assemble_system(space, kp, lambda x: 1 + x[:, 0], symmetry=True)
    assert skew.reduction.is_trivial


def test_mesh_symmetry_groups():
    sq = HpSpace(preset_mesh("square-fan", 0.5, 2), 2)
    ls = HpSpace(preset_mesh("lshape-fan", 0.5, 2), 2)
    assert len(mesh_symmetries(sq)) == 8
    assert len(mesh_symmetries(ls)) == 2
    red = build_reduction(sq)
    assert invariant(red, sq, assemble_rhs(sq, one))


def test_rhs_zero_and_partition_of_unity():
    mesh = preset_mesh("lshape-fan", 0.5, 2)
    assert not np.any(assemble_rhs(HpSpace(mesh, 3), lambda x: np.zeros(len(x))))
    b = assemble_rhs(HpSpace(mesh, 3, dirichlet=False), one)
    assert b.sum() == pytest.approx(3.0, abs=1e-10)


def test_rhs_polynomial_exact():
    # single rectangle [0, 2] x [0, 1], unconstrained Q_3 space, f of degree 3 per variable
    poly = Polygon([(0, 0), (2, 0), (2, 1), (0, 1)])
    mesh = refine(poly, [MacroElement(TRIVIAL, poly.vertices.copy())], MeshParams(0.5, 1))
    q = 3
    space = HpSpace(mesh, q, dirichlet=False)
    c = np.random.default_rng(4).standard_normal((q + 1, q + 1))

    def f(x):
        return sum(c[i, j] * x[:, 0] ** i * x[:, 1] ** j for i in range(q + 1) for j in range(q + 1))

    b = assemble_rhs(space, f)
    # exact: expand each basis function in monomials, then int x^a y^b = 2^(a+1) / ((a+1)(b+1))
    basis = monomial_basis(space.dof_coords, q, tensor=True)
    probe = np.random.default_rng(5).random((200, 2)) * [2, 1]
    powers = [(i, j) for i in range(q + 1) for j in range(q + 1)]
    V = np.stack([probe[:, 0] ** i * probe[:, 1] ** j for i, j in powers], -1)
    exact = []
    for phi in basis:
        a, *_ = np.linalg.lstsq(V, phi(probe), rcond=None)
        tot = 0.0
        for (i1, j1), ca in zip(powers, a):
            for i2 in range(q + 1):
                for j2 in range(q + 1):
                    tot += ca * c[i2, j2] * 2.0 ** (i1 + i2 + 1) / ((i1 + i2 + 1) * (j1 + j2 + 1))
        exact.append(tot)
    assert np.allclose(b, exact, rtol=1e-12, atol=1e-12 * np.abs(exact).max())


@pytest.mark.parametrize("s", [0.3, 0.5, 0.7])
def test_hat_energy_against_brute_force(s):
    poly = Polygon([(0, 0), (2, 0), (2, 1), (0, 1)])
    V1 = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    V2 = V1 + [1, 0]
    mesh = refine(poly, [MacroElement(TRIVIAL, V1.copy()), MacroElement(TRIVIAL, V2.copy())], MeshParams(0.5, 1))
    space = HpSpace(mesh, 2)
    i = int(np.argmin(np.linalg.norm(space.dof_coords - [1, 0.5], axis=1)))
    lib = assemble(space, KernelParams(s)).to_dense()[i, i]
    f1, p1 = tensor_lagrange([0, 0.5, 1], V1[0], V1[2])
    f2, p2 = tensor_lagrange([0, 0.5, 1], V2[0], V2[2])
    v1 = f1[int(np.argmin(np.linalg.norm(p1 - [1, 0.5], axis=1)))]
    v2 = f2[int(np.argmin(np.linalg.norm(p2 - [1, 0.5], axis=1)))]
    r1 = rect_rule(V1[0], V1[2], 8, 0.3, 6)
    r2 = rect_rule(V2[0], V2[2], 8, 0.3, 6)
    total = 0.0
    for (va, Va, ra) in ((v1, V1, r1), (v2, V2, r2)):
        for (vb, Vb) in ((v1, V1), (v2, V2)):
            total += pair_matrix([va], [vb], Va, Vb, s, 4, Va is Vb, ra, 20)[0, 0]
        total += ra[1] @ (va(ra[0]) ** 2 * kappa_rays(poly.vertices, ra[0], s, 20))
    assert lib == pytest.approx(total, rel=1e-4)


def test_dump_round_trip(tmp_path, fan2):
    space, A = fan2
    b = assemble_rhs(space, one)
    path = tmp_path / "sys.bin"
    dump_system(path, A, b, 0.5, 0.5, 2, 2)
    data = load_system(path)
    assert data["N"] == space.N and data["L"] == 2 and data["q"] == 2 and data["s"] == 0.5
    assert np.array_equal(data["A"], A.to_dense()) and np.array_equal(data["b"], b)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(AssemblyError):
        load_system(path)


def test_symmetric_dense_matrix_from_full():
    M = np.random.default_rng(0).standard_normal((7, 7))
    S = SymmetricDenseMatrix.from_full(M.copy(), block=3)
    assert np.allclose(S.to_dense(), 0.5 * (M + M.T), atol=1e-15)
    assert S.shape == (7, 7)


def test_single_element_square_mass_positive():
    poly = unit_square()
    mesh = refine(poly, [MacroElement(TRIVIAL, poly.vertices.copy())], MeshParams(0.5, 1))
    space = HpSpace(mesh, 2)
    A = assemble(space, KernelParams(0.5)).to_dense()
    assert A.shape == (1, 1) and A[0, 0] > 0
