"""Hot inner loops: projected scalar Newton sweeps and linear Gauss-Seidel.

Compiled with numba when available; pondflow.solver falls back to pure
Python twins with the same arithmetic in the same order otherwise.  The
compiled path only covers the closed-form Brooks-Corey nonlinearity (the
regular acceptance configuration); table-backed hydraulics always go
through the Python path.

All loops are strictly sequential in vertex order -- bit-for-bit
determinism is part of the solver contract.
"""

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


_EPS = 2.220446049250313e-16

# Parameter-vector layout for the closed-form Brooks-Corey phi derivatives.
# Built by solver._bc_pars; kept in one place so the Python twin and the
# kernel cannot drift apart.
P_M0 = 0          # Kirchhoff mobility scale K/mu
P_UB = 1          # bubbling point in transformed units, M0*p_b
P_BETA = 2        # 3*lam + 1
P_SM = 3          # residual saturation
P_SM_MAX = 4      # full saturation
P_STORAGE = 5     # porosity - tau*f1
P_TAU_F0 = 6      # tau*f0
P_BND = 7         # tau / (c * rho_g)
P_E_SE = 8        # lam/beta
P_E_P = 9         # -1/beta
P_DS = 10         # (s_M - s_m)*lam/(-u_b)
P_E_SE1 = 11      # lam/beta - 1
P_E_P1 = 12       # -1/beta - 1
P_PB = 13         # bubbling pressure p_b [Pa]
N_PARS = 14


@njit(cache=True)
def _phi_d_bc(y, hq, hin, psi, pars):
    """Right derivative of the per-vertex nonlinearity phi_q at y."""
    m0 = pars[P_M0]
    u_b = pars[P_UB]
    if y >= u_b:
        s = pars[P_SM_MAX]
        p_e = y / m0
    else:
        z = 1.0 - pars[P_BETA] * (y / u_b - 1.0)
        if z < 1e-300:
            z = 1e-300
        s = pars[P_SM] + (pars[P_SM_MAX] - pars[P_SM]) * z ** pars[P_E_SE]
        p_e = pars[P_PB] * z ** pars[P_E_P]
    d = hq * (pars[P_STORAGE] * s - pars[P_TAU_F0])
    if hin > 0.0:
        if p_e > 0.0:
            d += hin * pars[P_BND] * p_e
        else:
            d += hin * pars[P_BND] * psi * p_e
    return d


@njit(cache=True)
def _phi_dd_bc(y, hq, hin, psi, pars):
    """Right second derivative (curvature) of phi_q at y."""
    m0 = pars[P_M0]
    u_b = pars[P_UB]
    if y >= u_b:
        ds = 0.0
        dp_e = 1.0 / m0
    else:
        z = 1.0 - pars[P_BETA] * (y / u_b - 1.0)
        if z < 1e-300:
            z = 1e-300
        ds = pars[P_DS] * z ** pars[P_E_SE1]
        dp_e = z ** pars[P_E_P1] / m0
    c = hq * pars[P_STORAGE] * ds
    if hin > 0.0:
        if y >= 0.0:
            c += hin * pars[P_BND] * dp_e
        else:
            c += hin * pars[P_BND] * dp_e * psi
    return c


@njit(cache=True)
def _scalar_min_bc(a, r, lo, hi, x0, tol_abs, span, hq, hin, psi, pars):
    """Minimize 0.5*a*y^2 + r*y + phi_q(y) over [lo, hi] near x0.

    Monotone derivative bracketing with safeguarded Newton acceleration;
    the phi kinks (u_b and 0) are resolved by an exact sign test.  Mirrors
    solver._scalar_min_generic statement for statement.
    """
    if lo == hi:
        return lo
    y = x0
    if y < lo:
        y = lo
    if y > hi:
        y = hi
    d = a * y + r + _phi_d_bc(y, hq, hin, psi, pars)
    if d == 0.0:
        return y
    if d > 0.0:
        # minimizer is left of y
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
                dl = a * yl + r + _phi_d_bc(yl, hq, hin, psi, pars)
                if dl >= 0.0:
                    return yl
                break
            dl = a * yl + r + _phi_d_bc(yl, hq, hin, psi, pars)
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
                dr = a * yr + r + _phi_d_bc(yr, hq, hin, psi, pars)
                if dr <= 0.0:
                    return yr
                break
            dr = a * yr + r + _phi_d_bc(yr, hq, hin, psi, pars)
            if dr >= 0.0:
                break
            yl = yr
            step *= 8.0
            if step > 1e290:
                step = 1e290
            yr = y + step
    # sign test at the kinks (phi is C1 there, so one derivative serves
    # both sides; a kink can still be the exact minimizer of the total)
    for ik in range(2):
        k = pars[P_UB] if ik == 0 else 0.0
        if yl < k < yr:
            dk = a * k + r + _phi_d_bc(k, hq, hin, psi, pars)
            if dk < 0.0:
                yl = k
            elif dk > 0.0:
                yr = k
            else:
                return k
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
        d = a * x + r + _phi_d_bc(x, hq, hin, psi, pars)
        if d > 0.0:
            yr = x
        elif d < 0.0:
            yl = x
        else:
            return x
        c = a + _phi_dd_bc(x, hq, hin, psi, pars)
        if c > 0.0:
            xn = x - d / c
        else:
            xn = 0.5 * (yl + yr)
        if not (yl < xn < yr):
            xn = 0.5 * (yl + yr)
        x = xn
    return 0.5 * (yl + yr)


@njit(cache=True)
def pgs_sweep_bc(indptr, indices, data, b, v, lower, upper, h, h_in,
                 psi_w, pars, tol_abs, span):
    """One lexicographic projected Gauss-Seidel pass (closed-form BC)."""
    n = v.shape[0]
    for q in range(n):
        aqq = 0.0
        dot = 0.0
        for t in range(indptr[q], indptr[q + 1]):
            j = indices[t]
            val = data[t]
            dot += val * v[j]
            if j == q:
                aqq = val
        r = dot - aqq * v[q] - b[q]
        v[q] = _scalar_min_bc(aqq, r, lower[q], upper[q], v[q], tol_abs,
                              span, h[q], h_in[q], psi_w[q], pars)


@njit(cache=True)
def linear_gs(indptr, indices, data, b, x, sweeps):
    """Forward Gauss-Seidel sweeps on a CSR system; zero-diagonal rows
    (fully truncated coarse dofs) are pinned to zero."""
    n = x.shape[0]
    for _ in range(sweeps):
        for q in range(n):
            diag = 0.0
            acc = b[q]
            for t in range(indptr[q], indptr[q + 1]):
                j = indices[t]
                if j == q:
                    diag = data[t]
                else:
                    acc -= data[t] * x[j]
            if diag > 0.0:
                x[q] = acc / diag
            else:
                x[q] = 0.0
