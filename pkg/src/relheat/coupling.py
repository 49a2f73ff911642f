"""Measure transport between masses: one random path serves every m.

The jump map phi_m(z) = ell_m^{-1}(|z|) z/|z| pushes the m = 0 jump measure
onto the m > 0 one, where

    ell_m(r) = 2^{(d-1)/2} Gamma((d+1)/2) / (m^{(d+1)/2} int_r^inf u^{(d-3)/2} K_{(d+1)/2}(mu) du),

and the subordinator map psi_m is the inverse of

    psi_m^{-1}(r) = 4 / (int_r^inf u^{-3/2} e^{-m^2 u/2} du)^2.

Substituting x = m u shows the ell_m denominator is m^{-(d-1)/2} J_d(m r)
with J_d(x) = int_x^inf w^{(d-3)/2} K_{(d+1)/2}(w) dw, so a single
cumulative table of J_d per dimension serves every mass.  Scalar queries go
through the spline + Brent root finding (1e-10 round trips); bulk path
transforms use a uniform-log-grid inverse table per (m, d), accurate to
~1e-7 relative, which is refined on demand when queried outside its range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import lambertw as _lambertw

from .levy import FlatJumpBatch, JumpPath
from .specfun import _GL8_NODES, _GL8_WEIGHTS, _bessel_k_impl, erfcx
from .subordinator import FlatSubBatch, SubPath, sigma_density

__all__ = [
    "EllTransform",
    "ell",
    "ell_inv",
    "transform_path",
    "transform_batch",
    "psi_inv",
    "psi",
    "transform_sub",
    "transformed_drift",
]


class InversionError(RuntimeError):
    """Monotone inversion failed to bracket or converge."""


# ---------------------------------------------------------------------------
# J_d(x) = int_x^inf w^{(d-3)/2} K_{(d+1)/2}(w) dw, tabulated once per d
# ---------------------------------------------------------------------------

_J_X_LO = 1e-6
_J_X_HI = 680.0
_J_NODES = 24576


class _JTable:
    def __init__(self, d: int):
        self.d = d
        self.nu = 0.5 * (d + 1)
        # K_nu(w) ~ Gamma(nu) 2^{nu-1} w^{-nu} at 0, so the integrand ~ A/w^2
        self.small_coef = math.gamma(self.nu) * 2.0 ** (self.nu - 1.0)
        x = np.geomspace(_J_X_LO, _J_X_HI, _J_NODES + 1)
        lo = x[:-1]
        half = 0.5 * (x[1:] - lo)
        u = lo[:, None] + half[:, None] * (_GL8_NODES + 1.0)
        f = u ** (0.5 * (d - 3)) * _bessel_k_impl(self.nu, u, scaled=True) * np.exp(-u)
        panel = np.sum(half[:, None] * _GL8_WEIGHTS * f, axis=1)
        cum = np.cumsum(panel[::-1])[::-1]
        # drop any nodes whose cumulative integral underflows (remainder
        # beyond X_HI is ~e^{-680}, already far below the spline's accuracy)
        good = cum > 0.0
        self.x = x
        self.x_hi = float(x[:-1][good][-1])
        self.j_at_lo = float(cum[0])
        self._spline = CubicSpline(np.log(x[:-1][good]), np.log(cum[good]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.empty_like(x)
        small = x < _J_X_LO
        big = x >= self.x_hi
        mid = ~small & ~big
        if np.any(small):
            out[small] = self.j_at_lo + self.small_coef * (1.0 / x[small] - 1.0 / _J_X_LO)
        if np.any(mid):
            out[mid] = np.exp(self._spline(np.log(x[mid])))
        out[big] = 0.0
        return float(out[0]) if scalar else out


_J_TABLES: dict[int, _JTable] = {}


def _j_table(d: int) -> _JTable:
    tab = _J_TABLES.get(d)
    if tab is None:
        tab = _J_TABLES[d] = _JTable(d)
    return tab


def _ell_const(d: int) -> float:
    return 2.0 ** (0.5 * (d - 1)) * math.gamma(0.5 * (d + 1))


def ell(r, m: float, d: int):
    """The radial transport map ell_m(r); ell_0 is the identity."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("ell requires r > 0")
    if m == 0:
        return r
    out = _ell_const(d) / (m * _j_table(d)(m * r_arr))
    return float(out) if np.ndim(out) == 0 else out


def ell_inv(rho, m: float, d: int):
    """Inverse of ell_m, by bracketed root finding on the log scale.

    ell_m(ell_inv(rho)) = rho to 1e-10 relative; ell_inv(rho) <= rho.
    """
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr <= 0):
        raise ValueError("ell_inv requires rho > 0")
    if m == 0:
        return rho
    scalar = rho_arr.ndim == 0
    flat = np.atleast_1d(rho_arr).ravel()
    out = np.array([_ell_inv_scalar(float(p), m, d) for p in flat])
    return float(out[0]) if scalar else out.reshape(np.shape(rho))


def _ell_inv_scalar(rho: float, m: float, d: int) -> float:
    target = math.log(rho)

    def g(lr):
        return math.log(ell(math.exp(lr), m, d)) - target

    hi = math.log(rho)  # ell(r) >= r  =>  ell_inv(rho) <= rho
    lo = hi - 0.5
    tries = 0
    while g(lo) > 0.0:
        lo -= 2.0
        tries += 1
        if tries > 600:
            raise InversionError(f"could not bracket ell_inv({rho}, m={m}, d={d})")
    return math.exp(brentq(g, lo, hi, xtol=1e-13, rtol=1e-13))


# ---------------------------------------------------------------------------
# fast per-(m, d) inverse tables for bulk jump transforms
# ---------------------------------------------------------------------------

@dataclass
class EllTransform:
    """Uniform-log-grid interpolant of ell_m^{-1} covering [rho_lo, rho_hi].

    Queries outside the range trigger an on-demand rebuild with wider
    bounds.  Read-only after construction, so safe to share across workers.
    """

    m: float
    d: int
    rho_lo: float = 1e-9
    rho_hi: float = 1e13
    n_nodes: int = 16384

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("EllTransform requires m > 0 (m = 0 is the identity)")
        self._build()

    def _build(self):
        r_min = 0.5 * self.rho_lo
        r_max = max(1.0 / self.m, self.rho_lo)
        while ell(r_max, self.m, self.d) < self.rho_hi:
            r_max *= 1.5
            if self.m * r_max > _J_X_HI:
                break
        r_dense = np.geomspace(r_min, r_max, 4 * self.n_nodes)
        lell = np.log(ell(r_dense, self.m, self.d))
        if np.any(np.diff(lell) <= 0):
            raise InversionError("ell table is not strictly increasing")
        self._log_lo = math.log(self.rho_lo)
        self._inv_dx = (self.n_nodes - 1) / (math.log(self.rho_hi) - self._log_lo)
        lrho = self._log_lo + np.arange(self.n_nodes) / self._inv_dx
        self._log_r = np.interp(lrho, lell, np.log(r_dense))

    def inverse(self, rho: np.ndarray) -> np.ndarray:
        """Vectorized ell_m^{-1}; ~1e-7 relative accuracy."""
        rho = np.asarray(rho, dtype=float)
        if rho.size and (rho.min() < self.rho_lo or rho.max() > self.rho_hi):
            self.rho_lo = min(self.rho_lo, float(rho.min()) / 1e3)
            self.rho_hi = max(self.rho_hi, float(rho.max()) * 1e3)
            self._build()
        pos = (np.log(rho) - self._log_lo) * self._inv_dx
        pos = np.clip(pos, 0.0, self.n_nodes - 1.000001)
        idx = pos.astype(np.int64)
        frac = pos - idx
        return np.exp(self._log_r[idx] * (1.0 - frac) + self._log_r[idx + 1] * frac)


_ELL_TRANSFORMS: dict[tuple[float, int], EllTransform] = {}


def _ell_transform(m: float, d: int) -> EllTransform:
    key = (float(m), d)
    tab = _ELL_TRANSFORMS.get(key)
    if tab is None:
        tab = _ELL_TRANSFORMS[key] = EllTransform(m=m, d=d)
    return tab


def transform_path(path: JumpPath, m: float) -> JumpPath:
    """Apply the jump map to a base path: each jump Delta -> phi_m(Delta).

    The input must be sampled at mass 0.  Times are unchanged; the output
    truncation radius is ell_inv(eps) since |phi_m(Delta)| >= ell_inv(eps).
    No drift is added: the compensator correction vanishes by symmetry.
    """
    if path.m != 0.0:
        raise ValueError("transform_path expects a path sampled at mass 0")
    if m == 0:
        return JumpPath(path.horizon, path.eps, 0.0, path.times, path.deltas)
    radii = np.linalg.norm(path.deltas, axis=1)
    new_radii = _ell_transform(m, path.d).inverse(radii) if radii.size else radii
    with np.errstate(invalid="ignore"):
        dirs = np.where(radii[:, None] > 0, path.deltas / radii[:, None], 0.0)
    return JumpPath(
        horizon=path.horizon,
        eps=_ell_inv_scalar(path.eps, m, path.d),
        m=m,
        times=path.times,
        deltas=new_radii[:, None] * dirs,
    )


def transform_batch(batch: FlatJumpBatch, m: float) -> FlatJumpBatch:
    """Vectorized transform_path over a flat batch (directions shared)."""
    if batch.m != 0.0:
        raise ValueError("transform_batch expects paths sampled at mass 0")
    if m == 0:
        return batch
    new_radii = _ell_transform(m, batch.d).inverse(batch.radii) if batch.radii.size else batch.radii
    return FlatJumpBatch(
        horizon=batch.horizon,
        eps=_ell_inv_scalar(batch.eps, m, batch.d),
        m=m,
        d=batch.d,
        offsets=batch.offsets,
        times=batch.times,
        radii=new_radii,
        dirs=batch.dirs,
    )


# ---------------------------------------------------------------------------
# subordinator maps
# ---------------------------------------------------------------------------

def _sub_tail_integral(r: np.ndarray, a: float) -> np.ndarray:
    """int_r^inf u^{-3/2} e^{-a u} du, stable for all a r."""
    if a == 0.0:
        return 2.0 / np.sqrt(r)
    ar = a * r
    out = np.empty_like(r)
    big = ar > 1e4
    if np.any(~big):
        rs = r[~big]
        # 2 e^{-ar}/sqrt(r) - 2 sqrt(a pi) erfc(sqrt(ar)), via erfcx to avoid
        # the exp underflowing before the cancellation is resolved
        out[~big] = 2.0 * np.exp(-a * rs) * (
            1.0 / np.sqrt(rs) - math.sqrt(a * math.pi) * erfcx(np.sqrt(a * rs))
        )
    if np.any(big):
        # Watson expansion: e^{-ar} r^{-3/2}/a * sum_k (-1)^k (3/2)_k / (ar)^k
        rb = r[big]
        arb = ar[big]
        series = np.ones_like(rb)
        term = np.ones_like(rb)
        poch = 1.5
        for k in range(1, 8):
            term = term * (-(poch) / arb)
            series += term
            poch += 1.0
        out[big] = np.exp(-arb) * rb**-1.5 / a * series
    return out


def psi_inv(r, m: float):
    """psi_m^{-1}(r) = 4 / (int_r^inf u^{-3/2} e^{-m^2 u / 2} du)^2."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("psi_inv requires r > 0")
    if m == 0:
        return r
    scalar = r_arr.ndim == 0
    r_arr = np.atleast_1d(r_arr.astype(float))
    tail = _sub_tail_integral(r_arr, 0.5 * m * m)
    with np.errstate(divide="ignore", over="ignore"):
        out = 4.0 / (tail * tail)
    return float(out[0]) if scalar else out


def psi(r, m: float, tol: float = 1e-13):
    """Forward map psi_m(r) <= r, by safeguarded Newton on psi_inv.

    Vectorized with an active set; the starting bracket comes from the
    two-sided bound x e^{2ax} <= psi_inv(x) <= x e^{2ax} (1 + sqrt(ax))^2,
    whose left inversion is a Lambert W.  Exact identity at m = 0.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("psi requires r > 0")
    if m == 0:
        return r
    scalar = r_arr.ndim == 0
    flat = np.atleast_1d(r_arr.astype(float)).ravel()
    target = np.log(flat)
    a = 0.5 * m * m

    # upper end of the bracket: x* <= W(2aR)/(2a) <= R
    two_ar = 2.0 * a * flat
    x_hat = np.where(
        two_ar < 1e-8, flat, np.real(_lambertw(two_ar)) / (2.0 * a)
    )
    hi = np.log(x_hat) + 1e-12
    lo = hi - 1.0
    # expand the lower end where needed (active subset only)
    bad = np.nonzero(_log_psi_inv(lo, a) > target)[0]
    width = 2.0
    for _ in range(80):
        if bad.size == 0:
            break
        lo[bad] -= width
        width *= 1.5
        bad = bad[_log_psi_inv(lo[bad], a) > target[bad]]
    else:
        raise InversionError("psi bracket expansion failed")

    w = 0.5 * (lo + hi)
    active = np.arange(flat.size)
    for _ in range(100):
        wa = w[active]
        ta = target[active]
        g = _log_psi_inv(wa, a) - ta
        pos = g > 0
        hi[active] = np.where(pos, wa, hi[active])
        lo[active] = np.where(pos, lo[active], wa)
        # d/dw log psi_inv = x^{-1/2} e^{-a x} sqrt(psi_inv(x))
        slope = np.exp(0.5 * (g + ta - wa) - a * np.exp(wa))
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            w_new = wa - g / slope
        la, ha = lo[active], hi[active]
        inside = (w_new > la) & (w_new < ha)
        w_new = np.where(inside, w_new, 0.5 * (la + ha))
        moved = np.abs(w_new - wa) > tol
        w[active] = w_new
        active = active[moved]
        if active.size == 0:
            break
    out = np.exp(w)
    return float(out[0]) if scalar else out.reshape(r_arr.shape)


def _log_psi_inv(w: np.ndarray, a: float) -> np.ndarray:
    x = np.exp(w)
    tail = _sub_tail_integral(x, a)
    with np.errstate(divide="ignore"):
        # tail underflows for huge a x; +inf is the right bracketing value
        return math.log(4.0) - 2.0 * np.log(tail)


_GL64_NODES, _GL64_WEIGHTS = np.polynomial.legendre.leggauss(64)
_DRIFT_CACHE: dict[tuple[float, float], float] = {}


def transformed_drift(eps_t: float, m: float) -> float:
    """int_0^{eps_t} psi_m(r) sigma^0(dr): the drift of a transformed skeleton.

    Substituting r = v^2 removes the r^{-3/2} singularity; psi_m(v^2)/v^2 is
    smooth and ~1 near zero, so fixed GL64 is machine accurate.
    """
    if m == 0:
        return math.sqrt(2.0 * eps_t / math.pi)
    key = (float(eps_t), float(m))
    val = _DRIFT_CACHE.get(key)
    if val is None:
        v = 0.5 * math.sqrt(eps_t) * (_GL64_NODES + 1.0)
        w = 0.5 * math.sqrt(eps_t) * _GL64_WEIGHTS
        val = float(np.sum(w * 2.0 * psi(v * v, m) / (v * v) / math.sqrt(2.0 * math.pi)))
        _DRIFT_CACHE[key] = val
    return val


def transform_sub(path: SubPath, m: float) -> SubPath:
    """Apply the subordinator map: sizes r -> psi_m(r), drift re-integrated.

    Output is nondecreasing with value(t) <= the input's value(t) pathwise.
    """
    if m == 0:
        return SubPath(path.horizon, path.eps_t, path.drift, path.times, path.sizes)
    return SubPath(
        horizon=path.horizon,
        eps_t=path.eps_t,
        drift=transformed_drift(path.eps_t, m),
        times=path.times,
        sizes=psi(path.sizes, m) if path.sizes.size else path.sizes,
    )


def transform_sub_batch(batch: FlatSubBatch, m: float) -> FlatSubBatch:
    if m == 0:
        return batch
    return FlatSubBatch(
        horizon=batch.horizon,
        eps_t=batch.eps_t,
        drift=transformed_drift(batch.eps_t, m),
        offsets=batch.offsets,
        times=batch.times,
        sizes=psi(batch.sizes, m) if batch.sizes.size else batch.sizes,
    )


def sigma_tail_transport_gap(r: float, m: float, n_panels: int = 2000) -> float:
    """Relative gap in int_r^inf sigma^m = int_{psi_inv(r)}^inf sigma^0.

    Left side by direct panel quadrature of sigma^m, right side closed form;
    used by validation suites.
    """
    lhs_hi = r + 80.0 / max(m * m, 1e-2)
    edges = np.geomspace(r, lhs_hi, n_panels + 1)
    lo = edges[:-1]
    half = 0.5 * (edges[1:] - lo)
    u = lo[:, None] + half[:, None] * (_GL8_NODES + 1.0)
    lhs = float(np.sum(half[:, None] * _GL8_WEIGHTS * sigma_density(u, m)))
    rhs = 2.0 / math.sqrt(psi_inv(r, m)) / math.sqrt(2.0 * math.pi)
    return abs(lhs - rhs) / rhs
