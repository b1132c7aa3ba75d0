"""Monotone multigrid for the per-step box-constrained minimizations.

Each implicit step of the flow model is the minimization of

    F(v) = 1/2 <A v, v> - <b, v> + sum_q phi_q(v_q),   lower <= v <= upper,

with A symmetric positive semi-definite and phi_q convex (assembly module).
The solver combines projected Gauss-Seidel smoothing -- exact scalar
minimizations vertex by vertex, in lexicographic order -- with a truncated
coarse-grid correction: a linear V-cycle on the Newton model of F around
the current iterate, with the basis functions of active or kink-adjacent
vertices removed, followed by a projection onto the defect obstacles and a
monotone line search.  Energy never increases, iterates stay admissible,
and everything is bitwise deterministic.

PGSOnly mode (smoothing only) is retained as a slow reference solver.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import _kernels
from .assembly import evaluate_energy
from .errors import DimensionError, DomainError, NonConvergence, NotCoercive

MODE_MMG = "mmg"
MODE_PGS_ONLY = "pgs_only"

_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 200
    tol: float = 1e-10            # VI residual, relative to the problem scale
    pre_smooth: int = 2
    post_smooth: int = 2
    mode: str = MODE_MMG
    scalar_tol: float = 1e-15     # scalar-minimization width, relative
    damping: str = "line_search"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not (self.tol > 0.0 and self.scalar_tol > 0.0):
            raise DomainError("tolerances must be positive")
        if self.pre_smooth < 0 or self.post_smooth < 0:
            raise DomainError("smoothing counts must be nonnegative")
        if self.pre_smooth + self.post_smooth == 0:
            raise DomainError("at least one smoothing sweep is required")
        if self.mode not in (MODE_MMG, MODE_PGS_ONLY):
            raise DomainError(f"unknown solver mode {self.mode!r}")
        if self.damping != "line_search":
            raise DomainError(f"unknown damping strategy {self.damping!r}")


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    residual_scale: float
    scale: float
    energy_history: np.ndarray
    wall_time: float
    active_lower: int
    active_upper: int
    mode: str
    converged: bool


class ScalarFunction:
    """Convex scalar nonlinearity for scalar_convex_minimize.

    derivative(x) is the right derivative; left_derivative defaults to it
    (C1 functions).  kinks lists points where either derivative jumps or
    the curvature jumps; they are resolved by exact sign tests.
    """

    def __init__(self, derivative, curvature=None, kinks=(),
                 left_derivative=None):
        self.derivative = derivative
        self.curvature = curvature if curvature is not None else lambda x: 0.0
        self.kinks = tuple(kinks)
        self.left_derivative = (left_derivative if left_derivative is not None
                                else derivative)


class ZeroPhi:
    """phi == 0: lets pure quadratic programs reuse the obstacle machinery."""

    kinks = ()

    def value(self, v):
        return np.zeros_like(v)

    def derivative(self, v):
        return np.zeros_like(v)

    def curvature(self, v):
        return np.zeros_like(v)

    def value_at(self, q, x):
        return 0.0

    def derivative_at(self, q, x):
        return 0.0

    def curvature_at(self, q, x):
        return 0.0


def _scalar_min_generic(a, r, lo, hi, x0, tol_abs, span, dphi, ddphi,
                        kinks, dphi_left=None):
    """Minimize 0.5*a*y^2 + r*y + phi(y) over [lo, hi]; returns y*.

    Statement-for-statement twin of _kernels._scalar_min_bc with callable
    phi derivatives; additionally supports derivative jumps at the kinks
    through dphi_left.
    """
    if lo == hi:
        return lo
    if dphi_left is None:
        dphi_left = dphi
    y = x0
    if y < lo:
        y = lo
    if y > hi:
        y = hi
    d = a * y + r + dphi(y)
    if d == 0.0:
        return y
    if d > 0.0:
        yr = y
        step = 4.0 * tol_abs
        if step <= 0.0:
            step = 4.0 * _EPS * span
        # the derivative is nondecreasing, so its zero lies within d/a of y;
        # a seed far tinier than that width would exhaust the growth budget
        cap = d / a
        if cap > 1e290:
            cap = 1e290
        if step < _EPS * _EPS * cap:
            step = _EPS * _EPS * cap
        yl = y - step
        for _ in range(300):
            if yl <= lo:
                yl = lo
                dl = a * yl + r + dphi(yl)
                if dl >= 0.0:
                    return yl
                break
            dl = a * yl + r + dphi(yl)
            if dl <= 0.0:
                break
            yr = yl
            step *= 8.0
            if step > 1e290:
                step = 1e290
            yl = y - step
    else:
        yl = y
        step = 4.0 * tol_abs
        if step <= 0.0:
            step = 4.0 * _EPS * span
        cap = -d / a
        if cap > 1e290:
            cap = 1e290
        if step < _EPS * _EPS * cap:
            step = _EPS * _EPS * cap
        yr = y + step
        for _ in range(300):
            if yr >= hi:
                yr = hi
                dr = a * yr + r + dphi_left(yr)
                if dr <= 0.0:
                    return yr
                break
            dr = a * yr + r + dphi_left(yr)
            if dr >= 0.0:
                break
            yl = yr
            step *= 8.0
            if step > 1e290:
                step = 1e290
            yr = y + step
    for k in kinks:
        if yl < k < yr:
            dk_r = a * k + r + dphi(k)
            dk_l = a * k + r + dphi_left(k)
            if dk_l <= 0.0 <= dk_r:
                return k
            if dk_r < 0.0:
                yl = k
            else:
                yr = k
    x = 0.5 * (yl + yr)
    for _ in range(200):
        width = yr - yl
        m = abs(yl)
        m2 = abs(yr)
        if m2 > m:
            m = m2
        tw = 4.0 * _EPS * m
        if tol_abs > tw:
            tw = tol_abs
        if width <= tw:
            break
        d = a * x + r + dphi(x)
        if d > 0.0:
            yr = x
        elif d < 0.0:
            yl = x
        else:
            return x
        c = a + ddphi(x)
        if c > 0.0:
            xn = x - d / c
        else:
            xn = 0.5 * (yl + yr)
        if not (yl < xn < yr):
            xn = 0.5 * (yl + yr)
        x = xn
    return 0.5 * (yl + yr)


def scalar_convex_minimize(a, r, phi, lo, hi, x0, scalar_tol=1e-15):
    """Offset alpha* such that x0 + alpha* minimizes
    0.5*a*y^2 + r*y + phi(y) over [lo, hi].

    phi is a ScalarFunction or None (pure quadratic).  Raises NotCoercive
    for a <= 0.
    """
    if not a > 0.0:
        raise NotCoercive("quadratic coefficient must be positive")
    if lo > hi:
        raise DomainError("empty interval: lo > hi")
    if phi is None:
        phi = ScalarFunction(lambda x: 0.0)
    scale = max(abs(x0), abs(r) / a)
    if not np.isfinite(scale) or scale == 0.0:
        scale = 1.0
    tol_abs = scalar_tol * scale
    y = _scalar_min_generic(a, r, lo, hi, x0, tol_abs, scale,
                            phi.derivative, phi.curvature, phi.kinks,
                            phi.left_derivative)
    return float(y - x0)


def _problem_scale(problem, v):
    """max(|b|_inf / max diag A, |v|_inf, M0*p_scale): the natural size of
    admissible generalized pressures for this problem."""
    dmax = float(problem.A.diagonal().max())
    scale = float(np.abs(problem.b).max()) / dmax
    vmax = float(np.abs(v[np.isfinite(v)]).max()) if v.size else 0.0
    scale = max(scale, vmax)
    hyd = getattr(problem.phi, "hyd", None)
    if hyd is not None:
        scale = max(scale, hyd.M0 * hyd.p_scale)
    return max(scale, 1e-300)


def _bc_pars(phi):
    hyd = phi.hyd
    par = hyd.params
    K = _kernels
    pars = np.empty(K.N_PARS)
    pars[K.P_M0] = hyd.M0
    pars[K.P_UB] = hyd.u_b
    pars[K.P_BETA] = hyd._beta
    pars[K.P_SM] = par.s_m
    pars[K.P_SM_MAX] = par.s_M
    pars[K.P_STORAGE] = phi._storage_coef
    pars[K.P_TAU_F0] = phi.cfg.tau * phi.cfg.f0
    pars[K.P_BND] = phi._bnd_coef
    pars[K.P_E_SE] = par.lam / hyd._beta
    pars[K.P_E_P] = -1.0 / hyd._beta
    pars[K.P_DS] = (par.s_M - par.s_m) * par.lam / (-hyd.u_b)
    pars[K.P_E_SE1] = par.lam / hyd._beta - 1.0
    pars[K.P_E_P1] = -1.0 / hyd._beta - 1.0
    pars[K.P_PB] = par.p_b
    return pars


def _kernel_eligible(phi):
    return (getattr(phi, "hyd", None) is not None
            and getattr(phi.hyd, "_closed_form", False)
            and hasattr(phi, "_storage_coef"))


# Python twins of the compiled kernels: identical bytecode, same arithmetic.
_pgs_sweep_bc_py = getattr(_kernels.pgs_sweep_bc, "py_func",
                           _kernels.pgs_sweep_bc)
_linear_gs_py = getattr(_kernels.linear_gs, "py_func", _kernels.linear_gs)


def _pgs_generic(problem, v, tol_abs, span):
    A = problem.A
    indptr, indices, data = A.indptr, A.indices, A.data
    b = problem.b
    lower, upper = problem.lower, problem.upper
    phi = problem.phi
    kinks = tuple(getattr(phi, "kinks", ()))
    for q in range(v.shape[0]):
        aqq = 0.0
        dot = 0.0
        for t in range(indptr[q], indptr[q + 1]):
            j = indices[t]
            val = data[t]
            dot += val * v[j]
            if j == q:
                aqq = val
        r = dot - aqq * v[q] - b[q]
        v[q] = _scalar_min_generic(
            aqq, r, lower[q], upper[q], v[q], tol_abs, span,
            lambda y, qq=q: phi.derivative_at(qq, y),
            lambda y, qq=q: phi.curvature_at(qq, y),
            kinks)
    return v


def pgs_sweep(problem, v, tol_abs=None, span=None, force_python=False):
    """One lexicographic projected Gauss-Seidel pass; mutates and returns v.

    Every vertex is moved to the exact minimizer of F along its coordinate
    (residual r_q = (A v)_q - b_q - a_qq v_q with already-updated
    neighbors), so the energy cannot increase and v stays admissible.
    """
    if not isinstance(v, np.ndarray) or v.dtype != np.float64:
        raise DimensionError("iterate must be a float64 ndarray")
    if v.shape != problem.b.shape:
        raise DimensionError("iterate size does not match the problem")
    if float(problem.A.diagonal().min()) <= 0.0:
        raise NotCoercive("stiffness diagonal must be positive")
    if span is None:
        span = _problem_scale(problem, v)
    if tol_abs is None:
        tol_abs = SolverConfig().scalar_tol * span
    if _kernel_eligible(problem.phi):
        phi = problem.phi
        A = problem.A
        args = (A.indptr, A.indices, A.data, problem.b, v,
                problem.lower, problem.upper, phi.h, phi.h_in, phi.psi_w,
                _bc_pars(phi), tol_abs, span)
        if _kernels.HAVE_NUMBA and not force_python:
            _kernels.pgs_sweep_bc(*args)
        else:
            _pgs_sweep_bc_py(*args)
        return v
    return _pgs_generic(problem, v, tol_abs, span)


def vi_residual(problem, v):
    """Max complementarity violation of the box-constrained minimization.

    Interior vertices contribute |grad F|; vertices at a bound only the
    part of the gradient that points into the feasible set (the phi are C1,
    so one-sided derivatives coincide at the kinks).
    """
    grad = problem.gradient(v)
    res = np.abs(grad)
    at_up = v >= problem.upper
    at_lo = v <= problem.lower
    res[at_up] = np.maximum(grad[at_up], 0.0)
    res[at_lo] = np.maximum(-grad[at_lo], 0.0)
    return float(res.max()) if res.size else 0.0


def _gauss_seidel(H, b, x, sweeps, use_kernel):
    if sweeps <= 0:
        return
    if use_kernel:
        _kernels.linear_gs(H.indptr, H.indices, H.data, b, x, sweeps)
    else:
        _linear_gs_py(H.indptr, H.indices, H.data, b, x, sweeps)


def _v_cycle(mats, prols, b, x, level, pre, post, use_kernel):
    if level == 0:
        x[:] = np.linalg.lstsq(mats[0].toarray(), b, rcond=None)[0]
        return
    H = mats[level]
    _gauss_seidel(H, b, x, pre, use_kernel)
    resid = b - H @ x
    P = prols[level - 1]
    bc = P.T @ resid
    xc = np.zeros(bc.shape[0])
    _v_cycle(mats, prols, bc, xc, level - 1, pre, post, use_kernel)
    x += P @ xc
    _gauss_seidel(H, b, x, post, use_kernel)


def coarse_correction(problem, v, hierarchy, config=None, uscale=None):
    """Truncated Newton correction: one linear V-cycle on the second-order
    model of F at v, defect-obstacle projection, monotone line search.

    Vertices at an active bound or within scalar_tol of a phi-kink have
    their basis functions removed from the model (zeroed rows/columns,
    unit diagonal, zero right-hand side) and receive no correction.
    Returns (updated v, accepted step factor theta); theta = 0 means the
    correction was rejected and v is returned unchanged.
    """
    cfg = config if config is not None else SolverConfig()
    if v.shape != problem.b.shape:
        raise DimensionError("iterate size does not match the problem")
    if problem.level >= len(hierarchy.levels):
        raise DimensionError("problem level outside the hierarchy")
    if uscale is None:
        uscale = _problem_scale(problem, v)
    phi = problem.phi
    grad = problem.gradient(v)
    curv = np.array(phi.curvature(v), dtype=float)
    trunc = (v <= problem.lower) | (v >= problem.upper)
    ktol = cfg.scalar_tol * uscale
    for k in getattr(phi, "kinks", ()):
        trunc |= np.abs(v - k) <= ktol
    curv[trunc] = 0.0
    keep = (~trunc).astype(float)
    Dk = sparse.diags(keep)
    H = (Dk @ (problem.A + sparse.diags(curv)) @ Dk
         + sparse.diags(1.0 - keep)).tocsr()
    H.sort_indices()
    rhs = np.where(trunc, 0.0, -grad)

    mats = [None] * (problem.level + 1)
    mats[problem.level] = H
    prols = hierarchy.prolongations
    for j in range(problem.level, 0, -1):
        Hc = (prols[j - 1].T @ mats[j] @ prols[j - 1]).tocsr()
        Hc.sort_indices()
        mats[j - 1] = Hc
    d = np.zeros_like(rhs)
    use_kernel = _kernels.HAVE_NUMBA
    _v_cycle(mats, prols, rhs, d, problem.level,
             cfg.pre_smooth, cfg.post_smooth, use_kernel)
    d[trunc] = 0.0
    np.clip(d, problem.lower - v, problem.upper - v, out=d)
    if not np.any(d):
        return v, 0.0

    f0 = evaluate_energy(problem, v)
    theta = 1.0
    for _ in range(30):
        v_try = v + theta * d
        if evaluate_energy(problem, v_try) <= f0:
            return v_try, theta
        theta *= 0.5
    return v, 0.0


def solve(problem, hierarchy, v0, config=None):
    """Drive [pre-smooth; coarse correction (MMG); post-smooth] cycles until
    the VI residual falls below tol * residual_scale.

    Returns (minimizer, SolveReport).  Raises NonConvergence -- with the
    report and last iterate attached -- if max_iterations is exhausted.
    """
    cfg = config if config is not None else SolverConfig()
    t_start = time.perf_counter()
    v = np.array(getattr(v0, "values", v0), dtype=float)
    if v.shape != problem.b.shape:
        raise DimensionError("initial iterate size does not match the problem")
    np.clip(v, problem.lower, problem.upper, out=v)
    if float(problem.A.diagonal().min()) <= 0.0:
        raise NotCoercive("stiffness diagonal must be positive")

    uscale = _problem_scale(problem, v)
    res_scale = float(problem.A.diagonal().max()) * uscale
    tol_res = cfg.tol * res_scale
    tol_scalar = cfg.scalar_tol * uscale

    energies = [evaluate_energy(problem, v)]
    residual = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        for _ in range(cfg.pre_smooth):
            pgs_sweep(problem, v, tol_abs=tol_scalar, span=uscale)
        if cfg.mode == MODE_MMG:
            v, _theta = coarse_correction(problem, v, hierarchy, cfg, uscale)
        for _ in range(cfg.post_smooth):
            pgs_sweep(problem, v, tol_abs=tol_scalar, span=uscale)
        energies.append(evaluate_energy(problem, v))
        residual = vi_residual(problem, v)
        if residual <= tol_res:
            converged = True
            break

    report = SolveReport(
        iterations=iterations,
        final_residual=residual,
        residual_scale=res_scale,
        scale=uscale,
        energy_history=np.array(energies),
        wall_time=time.perf_counter() - t_start,
        active_lower=int(np.count_nonzero(v <= problem.lower)),
        active_upper=int(np.count_nonzero(v >= problem.upper)),
        mode=cfg.mode,
        converged=converged,
    )
    if not converged:
        raise NonConvergence(
            f"VI residual {residual:.3e} above {tol_res:.3e} after "
            f"{iterations} iterations", report=report, iterate=v)
    return v, report
