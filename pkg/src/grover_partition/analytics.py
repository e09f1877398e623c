"""Closed-form models used to cross-check the simulations.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

W_RMS_UNIFORM = 1.0 / math.sqrt(3.0)
C_DEFAULT = 1.0 / 3.0
D_DEFAULT = 1.2
LOG2_HALF_PI = math.log2(math.pi / 2)


@dataclass(frozen=True)
class AnalyticsParams:
    n: int
    k: float | None = None
    gamma: float | None = None
    r: float | None = None
    rho: float | None = None
    eta: float | None = None
    w_rms: float = W_RMS_UNIFORM
    C: float = C_DEFAULT
    D: float = D_DEFAULT

    def __post_init__(self):
        if self.rho is not None and self.gamma is not None and self.r is not None:
            if not math.isclose(self.r, decay_per_query(self.rho, self.gamma), rel_tol=1e-9):
                raise ValueError("r, rho and gamma are inconsistent (need r = 1/(rho*gamma))")

    @property
    def sigma(self) -> float:
        return width_ratio(self.n, self.gamma, self.w_rms)

    @property
    def k_eff(self) -> float:
        return -math.log2(self.gamma)

    @property
    def decay(self) -> float:
        if self.r is not None:
            return self.r
        if self.rho is not None:
            return decay_per_query(self.rho, self.gamma)
        if self.eta is not None:
            return cooperativity_to_decay(self.sigma, self.eta)
        return 0.0


def width_ratio(n: int, gamma: float, w_rms: float = W_RMS_UNIFORM) -> float:
    """Standard deviation of ``mu = 2 S_z / gamma`` for random weights."""
    return w_rms * math.sqrt(n) / gamma


def decay_per_query(rho: float, gamma: float) -> float:
    """``r = 1/(rho gamma)``; an infinite ``rho`` means no decay."""
    if math.isinf(rho):
        return 0.0
    return 1.0 / (rho * gamma)


def trials_needed(P, eps):
    """Independent trials needed to reach failure probability ``eps``.

    ``P = 0`` gives ``inf`` and ``P = 1`` gives exactly one trial.
    """
    P = np.asarray(P, dtype=float)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    with np.errstate(divide="ignore", over="ignore"):
        M = np.log(eps) / np.log1p(-P)
    M = np.where(P <= 0, np.inf, M)
    M = np.where(P >= 1, 1.0, M)
    return M if M.ndim else float(M)


def critical_bit_depth(n):
    n = np.asarray(n, dtype=float)
    out = n - 0.5 * np.log2(n * math.pi / 6)
    return out if out.ndim else float(out)


def critical_step_width(n, k):
    out = 2.0 ** (-np.minimum(critical_bit_depth(n), np.asarray(k, dtype=float)))
    return out if np.ndim(out) else float(out)


def expected_solutions(n, k):
    n = np.asarray(n, dtype=float)
    out = np.sqrt(6 / (math.pi * n)) * 2.0 ** (n - np.asarray(k, dtype=float))
    return out if out.ndim else float(out)


def chibar(sigma, r=0.0):
    """Gaussian-ensemble average of the real oracle phasor.

    Uses ``erfcx`` so that ``exp(z**2) erfc(z)`` stays finite for small sigma.
    """
    sigma = np.asarray(sigma, dtype=float)
    z = (1 + r) / (math.sqrt(2) * sigma)
    out = 1 - math.sqrt(2 * math.pi) / sigma * special.erfcx(z)
    return out if out.ndim else float(out)


def gain_curve(mu, chibar_value, r=0.0):
    """Single-cycle gain as a Lorentzian in ``mu`` (exact at ``mu = 0`` or ``r = 0``)."""
    mu = np.asarray(mu, dtype=float)
    c = chibar_value
    out = 4 * c * (c - 1) + (1 - r) ** 2 / (1 + r) ** 2 + 8 * c * (1 + r) / ((1 + r) ** 2 + mu ** 2)
    return out if np.ndim(out) else float(out)


def gain_exact(chi, chibar_value):
    """``|c_1/c_0|**2 = 4|chibar|**2 - 4 Re[chi conj(chibar)] + |chi|**2`` per state."""
    chi = np.asarray(chi)
    cb = chibar_value
    return 4 * np.abs(cb) ** 2 - 4 * np.real(chi * np.conj(cb)) + np.abs(chi) ** 2


def g0_bound(sigma, r=0.0):
    """Lower bound on the ensemble-mean gain of solution states after one cycle."""
    c = chibar(sigma, r)
    out = (1 - r) ** 2 / (1 + r) ** 2 + (8 / (1 + r) - 4) * c + 4 * np.square(c)
    return out if np.ndim(out) else float(out)


def qopt_model(rho, n, C=C_DEFAULT, D=D_DEFAULT):
    """Decay-limited optimum: ``(Q_opt, gamma_opt, T_opt*)``.

    Meaningful roughly for ``100 <~ rho <~ N**1.5 / sqrt(n)``; see ``qopt_window``.
    """
    x = math.pi * n / 6
    q = (4 / math.pi) ** (4 / 3) * x ** (1 / 6) * math.exp(-C) * (C * rho / D) ** (1 / 3)
    g = (math.pi * D / (4 * C * rho)) ** (2 / 3) * x ** (1 / 6)
    t = math.pi / (4 * math.sqrt(g)) * x ** 0.25
    return q, g, t


def qopt_window(n: int) -> tuple[float, float]:
    """Approximate ``rho`` range where ``qopt_model`` applies (constant factors unknown)."""
    return 100.0, (2.0 ** n) ** 1.5 / math.sqrt(n)


def classical_baselines(N: int, n_sol: int) -> dict:
    """Expected trial counts for memoryless (with replacement) and linear search."""
    if n_sol < 1 or n_sol > N:
        raise ValueError("need 1 <= n_sol <= N")
    return {
        "memoryless_expected": N / n_sol,
        "linear_expected": (N + 1) / (n_sol + 1),
    }


def memoryless_quantile(N: int, n_sol: int, P: float) -> float:
    """Trials for memoryless search to succeed with probability ``P``."""
    return trials_needed(n_sol / N, 1 - P)


def linear_quantile(N: int, n_sol: int, P: float) -> int:
    """Smallest ``M`` with probability >= ``P`` that a random-order scan has hit a solution."""
    miss = 1.0
    for M in range(1, N - n_sol + 2):
        miss *= (N - n_sol - (M - 1)) / (N - (M - 1))
        if 1 - miss >= P - 1e-15:
            return M
    return N - n_sol + 1


def cooperativity_to_decay(sigma, eta):
    if math.isinf(eta):
        return 0.0
    return 4 * np.square(sigma) / eta


def closed_form_queries(k: int, m: int) -> tuple[float, float]:
    """Recursive-algorithm query count: geometric-series value and its asymptote."""
    if k % m:
        raise ValueError("closed form needs m to divide k")
    a = 2 ** (m / 2) * (math.pi / 2)
    exact = (math.pi / 4) * 2 ** (m / 2) * ((1 + a) ** (k // m) - 1) / a
    approx = 2 ** (k * (0.5 + LOG2_HALF_PI / m) - 1)
    return exact, approx


FORMULAS = {
    "kc": lambda p: critical_bit_depth(p["n"]),
    "gamma_c": lambda p: critical_step_width(p["n"], p["k"]),
    "expected_solutions": lambda p: expected_solutions(p["n"], p["k"]),
    "trials": lambda p: trials_needed(p["P"], p.get("eps", 0.01)),
    "chibar": lambda p: chibar(p["sigma"], p.get("r", 0.0)),
    "gain": lambda p: gain_curve(p.get("mu", 0.0), p["chibar"], p.get("r", 0.0)),
    "g0": lambda p: g0_bound(p["sigma"], p.get("r", 0.0)),
    "qopt": lambda p: qopt_model(p["rho"], p["n"], p.get("C", C_DEFAULT), p.get("D", D_DEFAULT))[0],
    "gamma_opt": lambda p: qopt_model(p["rho"], p["n"], p.get("C", C_DEFAULT), p.get("D", D_DEFAULT))[1],
    "topt_star": lambda p: qopt_model(p["rho"], p["n"], p.get("C", C_DEFAULT), p.get("D", D_DEFAULT))[2],
    "memoryless": lambda p: classical_baselines(int(p["N"]), int(p["N_A"]))["memoryless_expected"],
    "linear": lambda p: classical_baselines(int(p["N"]), int(p["N_A"]))["linear_expected"],
    "decay": lambda p: cooperativity_to_decay(p["sigma"], p["eta"]),
    "sigma": lambda p: width_ratio(int(p["n"]), p["gamma"], p.get("w_rms", W_RMS_UNIFORM)),
    "queries": lambda p: closed_form_queries(int(p["k"]), int(p["m"]))[0],
    "queries_asymptotic": lambda p: closed_form_queries(int(p["k"]), int(p["m"]))[1],
}
