"""Benchmark soils and shared probe grids for the test suite.

The van Genuchten entries span shallow to very steep retention curves;
saturated conductivities are tabulated in cm/min and converted to intrinsic
permeability with the physical water density.
"""

from functools import lru_cache

import numpy as np

from pondflow import Hydraulics, SoilParams

RHO = 1000.0
G = 9.81
MU = 1.002e-3

# name -> (theta_r, theta_s, alpha [1/cm], l, Ks [cm/min])
VG_SOILS = {
    "hygiene_sandstone": (0.153, 0.250, 0.0079, 10.4, 1.08e-2),
    "touchet_silt_loam": (0.190, 0.469, 0.0050, 7.09, 1.88e-2),
    "silt_loam_ge3":     (0.131, 0.396, 0.00423, 2.06, 3.67e-4),
    "guelph_loam":       (0.218, 0.520, 0.0115, 2.03, 2.20e-3),
    "beit_netofa_clay":  (0.0,   0.446, 0.00152, 1.17, 5.74e-5),
}


def vg_params(name, **overrides):
    theta_r, theta_s, alpha, l, Ks_cm_min = VG_SOILS[name]
    K = (Ks_cm_min / 100.0 / 60.0) * MU / (RHO * G)
    fields = dict(model="van_genuchten", K=K, mu=MU, porosity=theta_s,
                  s_m=theta_r / theta_s, s_M=1.0, alpha=alpha,
                  alpha_unit="per_cm", l=l)
    fields.update(overrides)
    return SoilParams(**fields)


@lru_cache(maxsize=None)
def vg_hydraulics(name, delta=0.0, reg_kind="max"):
    over = {"delta": delta, "reg_kind": reg_kind} if delta else {}
    return Hydraulics(vg_params(name, **over))


@lru_cache(maxsize=None)
def sand_hydraulics(delta=0.0, reg_kind="max"):
    over = {"delta": delta, "reg_kind": reg_kind} if delta else {}
    return Hydraulics(SoilParams.sand(**over))


def pressure_probe():
    """10^3 log-spaced pressures covering [-1e6, 1e4] Pa on both sides of 0."""
    neg = -np.geomspace(1e-3, 1e6, 800)[::-1]
    pos = np.geomspace(1e-3, 1e4, 200)
    return np.concatenate([neg, pos])
