import numpy as np
import pytest

from hpfrac.assembly import SymmetricDenseMatrix
from hpfrac.mesh import preset_mesh
from hpfrac.solve import (EnergyCheckError, SolveError, StudyConfig, convergence_study, cutoff_ratio,
                          energy_value, fit_exponential, q_of_L, report_rows, solve, solve_level)
from hpfrac.space import HpSpace


def test_identity_and_scalar():
    b = np.arange(1.0, 6.0)
    assert np.array_equal(solve(np.eye(5), b), b)
    assert solve(np.array([[4.0]]), np.array([2.0]))[0] == 0.5


def test_random_spd_residual():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((50, 50))
    A = B @ B.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    c, info = solve(A, b, return_info=True)
    assert info.method == "cholesky"
    assert np.abs(A @ c - b).max() / np.abs(b).max() <= 1e-10
    S = SymmetricDenseMatrix.from_full(A.copy())
    assert np.allclose(solve(S, b), c, rtol=1e-12, atol=1e-14)


def test_zero_rhs_gives_zero_energy():
    A = np.diag([1.0, 2.0, 3.0])
    c = solve(A, np.zeros(3))
    assert not np.any(c)
    assert energy_value(c, np.zeros(3), A) == 0.0


def test_energy_identity_and_violation():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((8, 8))
    A = B @ B.T + np.eye(8)
    b = rng.standard_normal(8)
    c = solve(A, b)
    assert energy_value(c, b, A) == pytest.approx(c @ A @ c, rel=1e-12)
    with pytest.raises(EnergyCheckError):
        energy_value(c * 1.01, b, A)


def test_non_spd_names_pivot():
    A = np.diag([1.0, 2.0, -1.0, 4.0])
    with pytest.raises(SolveError) as err:
        solve(A, np.ones(4))
    assert err.value.pivot == 2 and "2" in str(err.value)


def test_degree_rules():
    assert [q_of_L("L", L) for L in (1, 2, 3)] == [1, 2, 3]
    assert q_of_L("L+1", 2) == 3 and q_of_L("2L", 3) == 6 and q_of_L(4, 9) == 4 and q_of_L("3", 1) == 3
    with pytest.raises(ValueError):
        q_of_L("L-1", 1)
    with pytest.raises(ValueError):
        q_of_L("L^2", 2)


def test_fit_exponential_recovers_parameters():
    N = np.array([100.0, 400.0, 1600.0, 6400.0])
    b, C, r2 = fit_exponential(N, 2.0 * np.exp(-0.7 * N ** 0.25))
    assert b == pytest.approx(0.7, rel=1e-12) and C == pytest.approx(2.0, rel=1e-12) and r2 == pytest.approx(1.0)
    assert fit_exponential([10.0], [0.1]) == (None, None, None)


def test_energy_increases_with_degree():
    # raising q on a fixed mesh gives nested spaces, so the energy cannot decrease
    es = [solve_level("square-fan", 0.5, 0.5, 2, q)[0].energy for q in (1, 2, 3)]
    assert es[0] > 0
    assert es[1] >= es[0] * (1 - 1e-10) and es[2] >= es[1] * (1 - 1e-10)


def test_single_level_study_has_no_fit():
    rep = convergence_study(StudyConfig(polygon="square", s=0.5, levels=[1], ref_offset=1))
    assert len(rep.rows) == 1 and rep.fit_b is None
    assert rep.rows[0].err_estimate > 0
    row = report_rows(rep)[0]
    assert row["fit_b"] == row["fit_C"] == row["fit_r2"] == ""


def test_study_config_validation():
    for bad in (dict(s=1.2), dict(sigma=1.0), dict(levels=[2, 1]), dict(levels=[]), dict(polygon="hexagon"),
                dict(ref_offset=-1), dict(s=0.5, beta=0.9)):
        with pytest.raises(ValueError):
            StudyConfig(**bad)


class UnitCutoff:
    def local(self, e, xr):
        n = len(xr)
        return np.ones(n), np.zeros((n, 2))


def test_cutoff_ratio_is_one_for_constant_cutoff():
    space = HpSpace(preset_mesh("square-fan", 0.5, 2), 2)
    c = np.random.default_rng(0).standard_normal(space.N)
    assert cutoff_ratio(space, c, 0.25, UnitCutoff()) == pytest.approx(1.0, rel=1e-14)
