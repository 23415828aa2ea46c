"""Regenerates the frozen reference constants used by the tests.

Every value here is computed without the package: closed forms, scipy
quadrature and scipy ODE solvers. Run ``python tests/_oracles.py``.
"""

import math

import numpy as np
from scipy import integrate, stats


def w1_quantile(ppf_a, ppf_b):
    val, _ = integrate.quad(lambda u: abs(ppf_a(u) - ppf_b(u)), 0, 1, limit=400)
    return val


def lq_moments(c, c_T, sigma, var0, T):
    """eta(0), s(T), chi(0) from solve_ivp on the Riccati system."""
    eta = integrate.solve_ivp(lambda t, y: y**2 - c, (T, 0), [c_T], rtol=1e-12, atol=1e-14, dense_output=True)
    s = integrate.solve_ivp(
        lambda t, y: -2 * eta.sol(t)[0] * y + sigma**2, (0, T), [var0], rtol=1e-12, atol=1e-14
    )
    chi = integrate.solve_ivp(
        lambda t, y: 0.5 * sigma**2 * eta.sol(t), (T, 0), [0.0], rtol=1e-12, atol=1e-14
    )
    return eta.sol(0)[0], s.y[0, -1], chi.y[0, -1]


def main():
    out = {}
    out["w1_n01_n21"] = w1_quantile(stats.norm(0, 1).ppf, stats.norm(2, 1).ppf)
    out["w1_n01_n04"] = w1_quantile(stats.norm(0, 1).ppf, stats.norm(0, 2).ppf)
    out["sqrt_2_over_pi"] = math.sqrt(2 / math.pi)
    out["normal_pdf_0"] = stats.norm.pdf(0.0)
    eta0, sT, chi0 = lq_moments(1.0, 0.0, 0.3, 0.25, 1.0)
    out["lq_eta0"], out["lq_sT"], out["lq_chi0"] = eta0, sT, chi0
    out["lq_J"] = -0.5 * eta0 * 0.25 + chi0
    # zero control against the equilibrium flow: var(Y_t) = 0.25 + sigma^2 t, mean 0
    out["lq_J_zero"] = -0.5 * integrate.quad(lambda t: 0.25 + 0.09 * t, 0, 1)[0]
    out["lq_gap_zero"] = out["lq_J"] - out["lq_J_zero"]
    out["terminal_eta0"] = lq_moments(0.0, 1.0, 0.3, 0.25, 1.0)[0]
    ode = integrate.solve_ivp(lambda t, q: -(1.0 + q), (0, 1), [0.0], rtol=1e-12, atol=1e-14)
    out["q_ode_T1"] = ode.y[0, -1]
    for k, v in out.items():
        print(f"{k} = {v!r}")


if __name__ == "__main__":
    main()
