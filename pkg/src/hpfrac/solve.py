"""Galerkin solve, energy values, convergence studies and cutoff diagnostics."""

import re
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg

from .assembly import SymmetricDenseMatrix, assemble_system
from .interpolation import loglinear_fit
from .kernel import KernelParams
from .mesh import MACRO_PRESETS, preset_mesh
from .pairs import QuadConfig
from .quadrature import reference_rule
from .space import HpSpace


class SolveError(RuntimeError):
    """Raised when the system is not numerically SPD; ``pivot`` is the failing index."""

    def __init__(self, msg, pivot=None):
        super().__init__(msg)
        self.pivot = pivot


class EnergyCheckError(RuntimeError):
    pass


@dataclass
class SolveInfo:
    method: str
    residual: float
    pivot: int = None


def _dense_lower(A):
    if isinstance(A, SymmetricDenseMatrix):
        return A.lower, A.matvec
    A = np.asarray(A, dtype=float)
    return A, lambda x: A @ x


def _pivot_from(err):
    m = re.search(r"(\d+)", str(err))
    return int(m.group(1)) - 1 if m else None


def solve(A, b, residual_tol=1e-8, return_info=False):
    """Coefficients c with A c = b for SPD A (Cholesky, Jacobi-CG fallback).

    Raises :class:`SolveError` naming the first non-positive pivot when the
    factorization fails and the fallback does not reach the residual target.
    """
    lower, mv = _dense_lower(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if lower.shape != (n, n):
        raise SolveError(f"dimension mismatch: matrix {lower.shape}, rhs {n}")
    bnorm = np.abs(b).max() if n else 0.0
    if bnorm == 0.0:
        c = np.zeros(n)
        return (c, SolveInfo("trivial", 0.0)) if return_info else c
    pivot = None
    try:
        fac = linalg.cho_factor(lower, lower=True, check_finite=False)
        c = linalg.cho_solve(fac, b, check_finite=False)
        method = "cholesky"
    except linalg.LinAlgError as err:
        pivot = _pivot_from(err)
        d = np.diag(lower).copy()
        if np.any(d <= 0):
            raise SolveError(f"matrix is not positive definite: non-positive diagonal at index "
                             f"{int(np.argmax(d <= 0))}", int(np.argmax(d <= 0)))
        op = LinearOperator((n, n), matvec=mv)
        prec = LinearOperator((n, n), matvec=lambda x: x / d)
        c, info = cg(op, b, rtol=1e-10, maxiter=10 * n, M=prec)
        method = "cg"
        if info != 0:
            raise SolveError(f"Cholesky failed at pivot {pivot} and CG did not converge; "
                             "the quadrature is likely too inaccurate", pivot)
    res = float(np.abs(b - mv(c)).max() / bnorm)
    if res > residual_tol:
        raise SolveError(f"Galerkin residual {res:.3e} exceeds {residual_tol:g} (method {method})", pivot)
    return (c, SolveInfo(method, res, pivot)) if return_info else c


def energy_value(coeffs, b, A=None, rtol=1e-8):
    """<f, u_N> = b^T c, cross-checked against c^T A c when A is given."""
    c = np.asarray(coeffs, dtype=float)
    e = float(np.dot(b, c))
    if A is not None:
        _, mv = _dense_lower(A)
        e2 = float(c @ mv(c))
        if abs(e2 - e) > rtol * max(abs(e), abs(e2)):
            raise EnergyCheckError(f"energy identity violated: b.c = {e:.15g}, c.Ac = {e2:.15g}")
    return e


# ----------------------------------------------------------------------------
# convergence study

POLYGON_ALIASES = {"square": "square-fan", "unit-square": "square-fan", "lshape": "lshape-fan",
                   "l-shape": "lshape-fan"}


def resolve_preset(name):
    name = POLYGON_ALIASES.get(name, name)
    if name not in MACRO_PRESETS:
        raise ValueError(f"unknown polygon preset {name!r}; choose from {sorted(MACRO_PRESETS)}")
    return name


def q_of_L(rule, L):
    """Degree for level L under a rule such as ``"L"``, ``"L+1"``, ``"2L"`` or an integer."""
    if isinstance(rule, (int, np.integer)):
        return int(rule)
    m = re.fullmatch(r"\s*(\d*)\s*\*?\s*L\s*(?:([+-])\s*(\d+))?\s*", str(rule))
    if m is None:
        if str(rule).strip().isdigit():
            return int(rule)
        raise ValueError(f"cannot parse degree rule {rule!r}")
    a = int(m.group(1)) if m.group(1) else 1
    off = int(m.group(3)) if m.group(3) else 0
    q = a * L + (off if m.group(2) != "-" else -off)
    if q < 1:
        raise ValueError(f"degree rule {rule!r} gives q = {q} at L = {L}")
    return q


def _one(x):
    return np.ones(len(x))


@dataclass
class StudyConfig:
    polygon: str = "square-fan"
    s: float = 0.5
    sigma: float = 0.5
    levels: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    q_rule: object = "L"
    beta: float = None
    quadrature: QuadConfig = field(default_factory=QuadConfig)
    ref_offset: int = 2
    symmetry: bool = True
    threads: int = 1

    def __post_init__(self):
        self.polygon = resolve_preset(self.polygon)
        KernelParams(self.s)
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        lv = [int(v) for v in self.levels]
        if not lv or any(b <= a for a, b in zip(lv, lv[1:])) or lv[0] < 1:
            raise ValueError("levels must be a nonempty increasing list of positive integers")
        self.levels = lv
        if self.ref_offset < 0:
            raise ValueError("ref_offset must be nonnegative")
        if self.beta is not None and not (0.5 - self.s < self.beta < 1 - self.s):
            raise ValueError("beta must lie in (1/2 - s, 1 - s)")


@dataclass
class StudyRow:
    L: int
    q: int
    N: int
    energy: float
    err_estimate: float = None
    wallclock_s: float = 0.0
    method: str = "cholesky"


@dataclass
class StudyReport:
    rows: list
    reference: StudyRow
    fit_b: float = None
    fit_C: float = None
    fit_r2: float = None
    clamped: list = field(default_factory=list)
    nonmonotone: list = field(default_factory=list)

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows],
                "reference": asdict(self.reference) if self.reference else None,
                "fit_b": self.fit_b, "fit_C": self.fit_C, "fit_r2": self.fit_r2,
                "clamped": self.clamped, "nonmonotone": self.nonmonotone}


def solve_level(preset, s, sigma, L, q, qc=None, f=_one, symmetry=True, threads=1):
    """Assemble and solve one configuration; returns (row, coefficients, system)."""
    t0 = time.perf_counter()
    mesh = preset_mesh(preset, sigma, L)
    space = HpSpace(mesh, q)
    sysm = assemble_system(space, KernelParams(s), f, qc, symmetry=symmetry, threads=threads)
    y, info = solve(sysm.A, sysm.b, return_info=True)
    e = energy_value(y, sysm.b, sysm.A)
    row = StudyRow(L, q, space.N, e, None, time.perf_counter() - t0, info.method)
    return row, y, sysm, space


def fit_exponential(N, err):
    """Least-squares fit err = C exp(-b N^(1/4)); returns (b, C, r2) or Nones."""
    N = np.asarray(N, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = err > 0
    if ok.sum() < 2:
        return None, None, None
    slope, icpt, r2 = loglinear_fit(N[ok] ** 0.25, err[ok])
    return -slope, float(np.exp(icpt)), r2


def convergence_study(cfg, f=_one, energy_tol=1e-10, log=None):
    """Energies for each level, the reference energy and the exponential fit."""
    rows = []
    for L in cfg.levels:
        row, *_ = solve_level(cfg.polygon, cfg.s, cfg.sigma, L, q_of_L(cfg.q_rule, L),
                              cfg.quadrature, f, cfg.symmetry, cfg.threads)
        rows.append(row)
        if log:
            log(row)
    Lr = cfg.levels[-1] + cfg.ref_offset
    if cfg.ref_offset > 0:
        ref, *_ = solve_level(cfg.polygon, cfg.s, cfg.sigma, Lr, q_of_L(cfg.q_rule, Lr),
                              cfg.quadrature, f, cfg.symmetry, cfg.threads)
        if log:
            log(ref)
    else:
        ref = rows[-1]
    report = StudyReport(rows, ref)
    for a, b in zip(rows, rows[1:] + [ref]):
        if b.energy < a.energy - energy_tol * abs(a.energy):
            report.nonmonotone.append(b.L)
    if cfg.ref_offset == 0 or len(rows) < 1:
        return report
    for r in rows:
        gap = ref.energy - r.energy
        if gap < 0:
            report.clamped.append(r.L)
        r.err_estimate = float(np.sqrt(max(gap, 0.0)))
    if len(rows) >= 2:
        report.fit_b, report.fit_C, report.fit_r2 = fit_exponential(
            [r.N for r in rows], [r.err_estimate for r in rows])
    return report


REPORT_COLUMNS = ["L", "q", "N", "energy", "err_estimate", "fit_b", "fit_C", "fit_r2", "wallclock_s"]


def report_rows(report):
    """Flat CSV rows; fit columns repeat the study-wide fit and stay empty without one."""
    out = []
    for r in report.rows:
        out.append({"L": r.L, "q": r.q, "N": r.N, "energy": repr(r.energy),
                    "err_estimate": "" if r.err_estimate is None else repr(r.err_estimate),
                    "fit_b": "" if report.fit_b is None else repr(report.fit_b),
                    "fit_C": "" if report.fit_C is None else repr(report.fit_C),
                    "fit_r2": "" if report.fit_r2 is None else repr(report.fit_r2),
                    "wallclock_s": f"{r.wallclock_s:.3f}"})
    return out


# ----------------------------------------------------------------------------
# weighted norms and the cutoff decomposition


def boundary_weight(poly):
    return lambda x: poly.boundary_distance(x, check=False)


def weighted_norm_sq(space, values_and_grads, weight, beta, elements, rules):
    """sum over elements of int r^(2beta-2) v^2 + r^(2beta) |grad v|^2."""
    l2 = h1 = 0.0
    for e in elements:
        k = space.mesh.elements[e]
        xr, w = rules(e)
        x = xr @ k.J.T + k.b
        w = w * abs(np.linalg.det(k.J))
        v, g = values_and_grads(e, xr, x)
        r = weight(x)
        l2 += np.sum(w * r ** (2 * beta - 2) * v ** 2)
        h1 += np.sum(w * r ** (2 * beta) * np.sum(g ** 2, axis=1))
    return l2, h1


def fe_values(space, coeffs):
    def vg(e, xr, x):
        return space.evaluate(coeffs, e, xr)
    return vg


def edge_power_product(poly, s):
    """u = prod over edges of (distance to the edge line)^s for a convex polygon, with its gradient."""
    V = poly.vertices
    ang = poly.interior_angles()
    if np.any(ang > np.pi + 1e-12):
        raise ValueError("the edge-power product needs a convex polygon")
    P, Q = V, np.roll(V, -1, axis=0)
    t = (Q - P) / np.hypot(*(Q - P).T)[:, None]
    nin = np.column_stack([-t[:, 1], t[:, 0]])

    def val_grad(x):
        d = (x[:, None, :] - P[None]) @ np.eye(2)
        d = np.einsum("nkc,kc->nk", d, nin)
        d = np.maximum(d, 0.0)
        u = np.prod(d ** s, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = u[:, None] * np.einsum("nk,kc->nc", s / d, nin)
        g[~np.isfinite(g)] = 0.0
        return u, g

    return val_grad


def cutoff_ratio(space, coeffs, beta, cut, n=None):
    """||g w||_{H1_beta(Omega)} / ||w||_{H1_beta(Omega minus Omega_0)} for an FE function w."""
    mesh = space.mesh
    weight = boundary_weight(mesh.poly)
    n = space.q + 4 if n is None else n
    outer = [e for e, k in enumerate(mesh.elements) if k.layer != "L0"]

    def rules(e):
        return reference_rule(mesh.elements[e].shape, n)

    def gw(e, xr, x):
        v, g = space.evaluate(coeffs, e, xr)
        c, gc = cut.local(e, xr)
        return c * v, c[:, None] * g + v[:, None] * gc

    a = weighted_norm_sq(space, gw, weight, beta, outer, rules)
    b = weighted_norm_sq(space, fe_values(space, coeffs), weight, beta, outer, rules)
    return float(np.sqrt(sum(a) / sum(b)))


def cutoff_remainder(mesh, u_model, beta, cut, q=4, qc=None):
    """(||(1 - g) u||_{H1_beta(Omega)}, ||u||_{H1_beta(L0 and L1 elements)}) with graded rules."""
    from .assembly import element_contact, mass_rule
    qc = qc or QuadConfig()
    weight = boundary_weight(mesh.poly)
    near = [e for e, k in enumerate(mesh.elements) if k.layer in ("L0", "L1")]

    def rules(e):
        return mass_rule(mesh.elements[e], q, element_contact(mesh, e), qc)

    def one_minus_g(e, xr, x):
        u, gu = u_model(x)
        c, gc = cut.local(e, xr)
        return (1 - c) * u, (1 - c)[:, None] * gu - u[:, None] * gc

    def plain(e, xr, x):
        return u_model(x)

    space_like = type("M", (), {"mesh": mesh})()
    a = weighted_norm_sq(space_like, one_minus_g, weight, beta, near, rules)
    b = weighted_norm_sq(space_like, plain, weight, beta, near, rules)
    return float(np.sqrt(sum(a))), float(np.sqrt(sum(b)))


@dataclass
class CutoffReport:
    levels: list
    ratios: list
    ratio_spread: float
    ratio_max: float
    remainders: list
    layer_norms: list
    decay_slope: float
    decay_r2: float


def cutoff_decomposition_check(preset="square-fan", s=0.5, sigma=0.5, levels=(2, 3, 4, 5, 6), q=None,
                               beta=None, samples=10, seed=0):
    """Uniformity of the cutoff ratio over L and decay of ||(1 - g^L) u_model||_{H1_beta} in L."""
    from .interpolation import default_beta
    from .mesh import cutoff
    beta = default_beta(s) if beta is None else beta
    rng = np.random.default_rng(seed)
    ratios, rem, lay = [], [], []
    for L in levels:
        mesh = preset_mesh(resolve_preset(preset), sigma, L)
        space = HpSpace(mesh, L if q is None else q)
        cut = cutoff(mesh)
        rs = [cutoff_ratio(space, rng.standard_normal(space.N), beta, cut) for _ in range(samples)]
        ratios.append(max(rs))
        u = edge_power_product(mesh.poly, s)
        a, b = cutoff_remainder(mesh, u, beta, cut)
        rem.append(a)
        lay.append(b)
    slope, _, r2 = loglinear_fit(np.asarray(levels, dtype=float), rem)
    return CutoffReport(list(levels), ratios, max(ratios) / min(ratios), max(ratios), rem, lay, slope, r2)
