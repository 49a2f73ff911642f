"""Self-contained oracle and invariant checks, runnable from the CLI.

Each check returns (name, passed, detail).  These are desk-scale versions
of the package's test suite: closed forms against independent quadrature,
monotonicity scans, and small Monte Carlo distribution checks.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .coupling import psi_inv, sigma_tail_transport_gap, ell
from .levy import LevyConfig, kernel, levy_density, sample_path, small_ball_moment, tail_mass
from .subordinator import ig_density, levy_exponent, sample_ig
from .specfun import bessel_k

Check = tuple[str, bool, str]


def _kernel_normalization(d: int, m: float, t: float = 1.0) -> Check:
    from .levy import sphere_surface

    val, _ = integrate.quad(
        lambda r: kernel(r, t, m, d=d) * r ** (d - 1) * sphere_surface(d),
        0.0, np.inf, limit=400,
    )
    ok = abs(val - 1.0) <= 1e-6
    return (f"kernel normalization d={d} m={m}", ok, f"integral={val!r}")


def _kernel_monotone(d: int = 1, t: float = 1.0) -> Check:
    ys = np.array([0.0, 0.5, 1.0, 3.0])
    prev = None
    ok = True
    for m in (2.0, 1.0, 0.5, 0.25, 0.0):
        vals = np.array([kernel(y, t, m, d=d) for y in ys])
        if prev is not None and not np.all(vals >= prev - 1e-14):
            ok = False
        prev = vals
    return ("kernel increases as m decreases", ok, "grid {2,1,0.5,0.25,0}")


def _density_monotone(d: int = 1) -> Check:
    ys = np.array([0.3, 1.0, 3.0])
    prev = None
    ok = True
    for m in (2.0, 1.0, 0.5, 0.25, 0.0):
        vals = np.array([levy_density(y, m, d=d) for y in ys])
        if prev is not None and not np.all(vals >= prev - 1e-14):
            ok = False
        prev = vals
    return ("jump density increases as m decreases", ok, "grid {2,1,0.5,0.25,0}")


def _tail_examples() -> Check:
    got = tail_mass(1.0, 0.0, 1)
    ok = abs(got - 2.0 / math.pi) <= 1e-12
    got2 = tail_mass(0.001, 0.0, 1)
    ok &= abs(got2 - 2000.0 / math.pi) <= 1e-9 * got2
    ok &= tail_mass(1.0, 1.0, 1) < tail_mass(1.0, 0.0, 1)
    return ("tail mass closed forms", bool(ok), f"{got!r}, {got2!r}")


def _small_ball() -> Check:
    ok = True
    for m in (0.0, 0.5, 1.0):
        for d in (1, 2, 3):
            val, _ = integrate.quad(
                lambda r: levy_density(r, m, d=d) * r ** (d - 1) * r**1.5,
                1e-12, 1.0, limit=200,
            )
            bound = small_ball_moment(1.0, 1.5, d) / (2.0 * math.pi ** (0.5 * d) / math.gamma(0.5 * d))
            ok &= np.isfinite(val) and val <= bound * 1.01
    return ("small-jump moment |y|^{1.5} finite", bool(ok), "m in {0,.5,1}, d in {1,2,3}")


def _char_function(n: int = 4000) -> Check:
    rng = np.random.Generator(np.random.Philox(key=[11, 0]))
    cfg = LevyConfig(d=1, m=0.0, eps=1e-3)
    xs = np.array([sample_path(cfg, 1.0, rng).endpoint()[0] for _ in range(n)])
    ok = True
    detail = []
    for xi in (0.5, 1.0):
        emp = np.mean(np.exp(1j * xi * xs))
        ref = math.exp(-abs(xi))
        err = abs(emp - ref)
        tol = 3.0 / math.sqrt(n) + 1e-3
        ok &= err <= tol
        detail.append(f"xi={xi}: err={err:.4f} tol={tol:.4f}")
    return ("empirical characteristic function (m=0)", bool(ok), "; ".join(detail))


def _ig_checks(n: int = 4000) -> Check:
    val, _ = integrate.quad(lambda r: ig_density(r, 1.0, 1.0), 0.0, np.inf, limit=400)
    ok = abs(val - 1.0) <= 1e-8
    rng = np.random.Generator(np.random.Philox(key=[12, 0]))
    samples = sample_ig(1.0, 1.0, rng, size=n)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n))
    ok &= abs(mean - 1.0) <= 4.0 * se
    return ("subordinator marginal (norm + mean)", bool(ok), f"mean={mean:.4f}+-{se:.4f}")


def _zeta_checks() -> Check:
    ok = abs(levy_exponent(0.0, 0.0)) == 0.0
    ok &= abs(levy_exponent(1.0, 0.0) - (1.0 - 1.0j)) <= 1e-14
    prev = None
    for m in (1.0, 0.5, 0.25, 0.125):
        gap = abs(levy_exponent(1.0, m) - levy_exponent(1.0, 0.0))
        if prev is not None:
            ok &= gap <= prev + 1e-14
        prev = gap
    return ("Levy exponent values and m->0 trend", bool(ok), "")


def _jump_transport() -> Check:
    ok = True
    worst = 0.0
    for m in (0.5, 1.0, 2.0):
        for rho in (0.1, 1.0, 10.0):
            lhs = tail_mass(rho, m, 1)
            rhs = tail_mass(float(ell(rho, m, 1)), 0.0, 1)
            rel = abs(lhs - rhs) / lhs
            worst = max(worst, rel)
            ok &= rel <= 1e-8
    return ("jump tail transport identity", bool(ok), f"worst rel={worst:.2e}")


def _sub_transport() -> Check:
    ok = True
    worst = 0.0
    for m in (0.5, 1.0, 2.0):
        for r in (0.1, 1.0, 10.0):
            rel = sigma_tail_transport_gap(r, m)
            worst = max(worst, rel)
            ok &= rel <= 1e-8
    return ("subordinator tail transport identity", bool(ok), f"worst rel={worst:.2e}")


def _psi_closed_form() -> Check:
    ok = True
    worst = 0.0
    for m in (0.5, 1.0, 2.0):
        for r in np.geomspace(0.01, 100.0, 20):
            quad_val, _ = integrate.quad(
                lambda u: u**-1.5 * math.exp(-0.5 * m * m * u), r, np.inf, limit=400
            )
            ref = 4.0 / quad_val**2
            rel = abs(psi_inv(float(r), m) - ref) / ref
            worst = max(worst, rel)
            ok &= rel <= 1e-9
    return ("psi_inv closed form vs quadrature", bool(ok), f"worst rel={worst:.2e}")


def _bessel_recurrence() -> Check:
    ok = True
    for x in np.geomspace(1e-3, 50.0, 12):
        lhs = bessel_k(2.0, x)
        rhs = bessel_k(0.0, x) + 2.0 / x * bessel_k(1.0, x)
        ok &= abs(lhs - rhs) <= 1e-10 * abs(rhs)
    return ("Bessel K recurrence", bool(ok), "nu: 0,1 -> 2")


SUITES = {
    "kernel": lambda: [
        _kernel_normalization(1, 0.0), _kernel_normalization(1, 1.0),
        _kernel_normalization(2, 1.0), _kernel_normalization(3, 1.0),
        _kernel_monotone(),
    ],
    "levy": lambda: [
        _density_monotone(), _tail_examples(), _small_ball(), _char_function(),
        _bessel_recurrence(),
    ],
    "subordinator": lambda: [_ig_checks(), _zeta_checks()],
    "coupling": lambda: [_jump_transport(), _sub_transport(), _psi_closed_form()],
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        out = []
        for key in SUITES:
            out.extend(SUITES[key]())
        return out
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()
