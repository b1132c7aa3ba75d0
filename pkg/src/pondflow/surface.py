"""Explicit surface-water balance on the infiltration boundary.

Each dual cell of the trace grid carries a ponding height w [m] that evolves
by forward Euler: rain in, leakage through the soil surface out.  The
exchange flux g couples to the subsurface generalized pressure of the same
vertex; everything is local per cell, there is no lateral transport.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .hydraulics import BROOKS_COREY

# Safety shave applied to the positivity bounds: at the exact bound the
# updated height is analytically zero, so a few ulps of rounding could push
# it negative; pulling theta down by 2^-48 keeps the float-evaluated update
# nonnegative while staying far inside every reported tolerance.
_THETA_SHAVE = 1.0 - 2.0 ** -48


@dataclass(frozen=True)
class SurfaceField:
    """Per-trace-cell scalars (w [m] or rain rate [m/s]) on one mesh level."""

    values: np.ndarray
    level: int

    @property
    def n_cells(self):
        return np.asarray(self.values).shape[0]


@dataclass(frozen=True)
class RainSpec:
    """Piecewise-constant rainfall events (x_lo, x_hi, rate, t_lo, t_hi).

    Rates are nonnegative; space and time membership use closed intervals.
    """

    events: tuple = ()

    def __post_init__(self):
        for ev in self.events:
            x_lo, x_hi, rate, t_lo, t_hi = ev
            if rate < 0.0:
                raise DomainError(f"rain rate {rate} must be >= 0")
            if not (x_lo < x_hi and t_lo < t_hi):
                raise DomainError(f"degenerate rain event {ev}")

    def rates(self, x, t):
        """Total rate [m/s] at positions x and time t."""
        x = np.asarray(x, dtype=float)
        r = np.zeros_like(x)
        for x_lo, x_hi, rate, t_lo, t_hi in self.events:
            if t_lo <= t <= t_hi:
                r[(x >= x_lo) & (x <= x_hi)] += rate
        return r


def coupling_flux_g(u_at_node, w_cell, hyd, c, sigma):
    """Boundary exchange flux g = w/c - kappa*(u, w) [m/s], positive out of
    the pond into the soil (infiltration), negative into it (exfiltration)."""
    w = np.asarray(w_cell, dtype=float)
    return w / c - hyd.kappa_star(u_at_node, w, c, sigma)


def update_surface(w_n, u_np1, r_np1, tau, c, sigma, hyd):
    """One explicit Euler step of the ponding heights.

    w_np1 = w_n + tau * (r_np1 - g(u_np1, w_n)) per cell; u_np1 holds the
    fresh subsurface solution restricted to the infiltration vertices.
    """
    if tau <= 0.0:
        raise DomainError("tau must be positive")
    if w_n.level != r_np1.level:
        raise DimensionError("surface fields live on different levels")
    w = np.asarray(w_n.values, dtype=float)
    u = np.asarray(u_np1, dtype=float)
    r = np.asarray(r_np1.values, dtype=float)
    if not (w.shape == u.shape == r.shape):
        raise DimensionError(
            f"cell counts differ: w {w.shape}, u {u.shape}, r {r.shape}")
    g = coupling_flux_g(u, w, hyd, c, sigma)
    return SurfaceField(values=w + tau * (r - g), level=w_n.level)


def step_bound_terms(u, r, c, sigma, hyd):
    """Per-cell positivity bounds (theta_1, theta_2) [s].

    theta_1 = c*sigma/(sigma - c*r + h_head) where that denominator is
    positive (inf otherwise), theta_2 = c*sigma/(sigma + h_head), with
    h_head the suction head [m] at the cell's vertex.  Values strictly
    below c are shaved by 2^-48 (see _THETA_SHAVE).
    """
    h_head = hyd.h_neg(u) / hyd.rho_g
    r = np.broadcast_to(np.asarray(r, dtype=float), h_head.shape)
    den1 = sigma - c * r + h_head
    with np.errstate(divide="ignore"):
        theta1 = np.where(den1 > 0.0, c * sigma / den1, np.inf)
    theta2 = c * sigma / (sigma + h_head)
    theta1 = np.where(den1 > sigma, theta1 * _THETA_SHAVE, theta1)
    theta2 = np.where(h_head > 0.0, theta2 * _THETA_SHAVE, theta2)
    return theta1, theta2


def positivity_step_bound(u, r, c, sigma, hyd):
    """Largest time step keeping every nonnegative cell height nonnegative.

    tau_max = min over cells of min{c, theta_1, theta_2}; always in (0, c].
    """
    if c <= 0.0 or sigma <= 0.0:
        raise DomainError("c and sigma must be positive")
    theta1, theta2 = step_bound_terms(np.atleast_1d(u), r, c, sigma, hyd)
    return float(min(c, theta1.min(), theta2.min()))


def cfl_bound(h, hyd):
    """Gravity-transport step bound tau_cfl = h*n*mu/(K*rho_g*(3+2/lambda)).

    Defined for Brooks-Corey soils, whose relative-permeability slope is
    bounded on [0, 1]; the van Genuchten slope diverges at full saturation,
    so no positive bound exists there.
    """
    par = hyd.params
    if h <= 0.0:
        raise DomainError("mesh size must be positive")
    if par.model != BROOKS_COREY:
        raise DomainError("CFL bound needs a bounded relative-permeability "
                          "slope (Brooks-Corey only)")
    sup_slope = 3.0 + 2.0 / par.lam
    return h * par.porosity * par.mu / (par.K * hyd.rho_g * sup_slope)
