#!/usr/bin/env python3
"""Regenerates the frozen oracle values used by the Rust test suites.

Every value here is computed by an implementation that shares nothing with
the Rust code paths it checks (closed forms evaluated in double precision,
scipy quadrature, scipy ODE integration, root bracketing).

    python3 crates/core/fixtures/generate.py
"""
import json
import math
import os

import numpy as np
from scipy import integrate, optimize

RE = 6371.0
MU = 398600.4418
HERE = os.path.dirname(os.path.abspath(__file__))


def dump(name, provenance, values):
    path = os.path.join(HERE, name)
    with open(path, "w") as fh:
        json.dump({"provenance": provenance, "values": values}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def slant(el_deg, h):
    s = math.sin(math.radians(el_deg))
    return math.sqrt((RE * s) ** 2 + 2 * RE * h + h * h) - RE * s


def pass_duration_two_body(h, max_el_deg, mask_deg):
    """Integrate a circular two-body orbit whose ground track passes through
    the zenith of a non-rotating station and time the interval above the mask."""
    rs = RE + h
    v = math.sqrt(MU / rs)
    station = np.array([RE, 0.0, 0.0])
    up = station / RE
    # start a quarter orbit before culmination, moving through the station meridian
    y0 = [0.0, -rs, 0.0, v, 0.0, 0.0]

    def rhs(_t, y):
        r = np.array(y[:3])
        a = -MU * r / np.linalg.norm(r) ** 3
        return [y[3], y[4], y[5], a[0], a[1], a[2]]

    period = 2 * math.pi * math.sqrt(rs ** 3 / MU)
    ts = np.arange(0.0, period / 2, 0.05)
    sol = integrate.solve_ivp(rhs, (0, ts[-1]), y0, t_eval=ts, rtol=1e-11, atol=1e-9)
    el = []
    for k in range(sol.y.shape[1]):
        los = sol.y[:3, k] - station
        el.append(math.degrees(math.asin(np.dot(los, up) / np.linalg.norm(los))))
    el = np.array(el)
    above = ts[el >= mask_deg]
    return float(above[-1] - above[0]), float(el.max())


def coupling_flat(beta):
    """|int_pupil M|^2 / (A * int_plane |M|^2) by radial quadrature, R = 1."""
    w = beta
    num, _ = integrate.quad(lambda r: 2 * math.pi * r * math.exp(-r * r / (w * w)), 0.0, 1.0)
    den_mode, _ = integrate.quad(lambda r: 2 * math.pi * r * math.exp(-2 * r * r / (w * w)), 0.0, np.inf)
    return num * num / (math.pi * den_mode)


def h2(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def main():
    dump(
        "geometry.json",
        "closed-form spherical-Earth slant range and flat-top footprint loss evaluated in numpy; "
        "pass duration from scipy solve_ivp two-body integration (rtol 1e-11) of a zenith pass",
        {
            "slant_range_km_h500": {str(e): slant(e, 500.0) for e in (0, 10, 30, 60, 90)},
            "footprint_10m_aperture_0p8_loss_db": -20 * math.log10(0.8 / 10.0),
            "pass_h500_max90_mask10": dict(
                zip(("duration_s", "peak_elevation_deg"), pass_duration_two_body(500.0, 90.0, 10.0))
            ),
        },
    )

    dump(
        "turbulence.json",
        "r0 scaling laws evaluated in double precision",
        {
            "r0_zenith60_ref": 0.05 * math.cos(math.radians(60)) ** 0.6,
            "r0_1550_from_500": 0.05 * (1550e-9 / 500e-9) ** 1.2,
            "kolmogorov_prefactor": 2 * (24 / 5 * math.gamma(6 / 5)) ** (5 / 6),
        },
    )

    res = optimize.minimize_scalar(lambda b: -coupling_flat(b), bounds=(0.5, 2.0), method="bounded",
                                   options={"xatol": 1e-10})
    dump(
        "coupling.json",
        "flat circular pupil vs Gaussian mode: scipy.integrate.quad radial overlap, "
        "bounded scalar maximisation over the mode/pupil radius ratio",
        {"optimal_ratio": float(res.x), "peak_eta": float(-res.fun),
         "eta_at_ratio_1": coupling_flat(1.0)},
    )

    root = optimize.brentq(lambda q: 1 - 2 * h2(q), 0.01, 0.2, xtol=1e-14)
    mu, nu = 0.5, 0.1
    q_mu, q_nu = 1 - math.exp(-mu), 1 - math.exp(-nu)
    y1_ideal = mu / (mu * nu - nu * nu) * (q_nu * math.exp(nu) - q_mu * math.exp(mu) * nu ** 2 / mu ** 2)
    dump(
        "postprocessing.json",
        "binary entropy and rate expressions evaluated in double precision; root by scipy brentq; "
        "vacuum+weak decoy lower bound evaluated at ideal lossless statistics (Y0 = 0, Yn = 1)",
        {
            "h2_0p05": h2(0.05),
            "rate_f1p16_q0p05": 1 - (1 + 1.16) * h2(0.05),
            "bb84_threshold": root,
            "leakage_bound_n1e4_q0p05": 1.35 * 1e4 * h2(0.05),
            "decoy_ideal_y1_lower": y1_ideal,
        },
    )


if __name__ == "__main__":
    main()
