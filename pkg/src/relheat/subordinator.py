"""Time-change layer: the inverse Gaussian subordinator T.

Marginals follow the density

    P(T(t) in dr) = t/sqrt(2 pi) e^{mt} r^{-3/2} exp(-(t^2/r + m^2 r)/2) dr

(an IG(mu = t/m, lambda = t^2) law for m > 0; the one-sided stable-1/2 law
t^2/Z^2 at m = 0).  Whole paths are sampled as truncated jump skeletons of
the m = 0 subordinator Lévy measure

    sigma^0(r) = (2 pi)^{-1/2} r^{-3/2},

with jumps below eps_t replaced by their exact mean drift sqrt(2 eps_t/pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SubPath",
    "ig_density",
    "sample_ig",
    "sigma_density",
    "sigma_tail",
    "sub_drift",
    "sample_sub_path",
    "sample_sub_block",
    "FlatSubBatch",
    "levy_exponent",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass
class SubPath:
    """Truncated subordinator skeleton: T(s) = drift*s + sum_{times <= s} sizes."""

    horizon: float
    eps_t: float
    drift: float
    times: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=float)
        if self.times.shape != self.sizes.shape:
            raise ValueError("times and sizes must have equal shapes")
        if self.drift < 0:
            raise ValueError("drift must be >= 0")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("jump times must be strictly increasing")
            if self.times[0] <= 0 or self.times[-1] > self.horizon:
                raise ValueError("jump times must lie in (0, horizon]")
            if np.any(self.sizes <= 0):
                raise ValueError("jump sizes must be positive")

    def value(self, s):
        """T(s), right-continuous and nondecreasing."""
        s_arr = np.asarray(s, dtype=float)
        k = np.searchsorted(self.times, s_arr, side="right")
        cum = np.concatenate([[0.0], np.cumsum(self.sizes)])
        out = self.drift * s_arr + cum[k]
        return float(out) if s_arr.ndim == 0 else out


def ig_density(r, t: float, m: float):
    """Marginal density of T(t) at r > 0."""
    if t <= 0:
        raise ValueError("ig_density requires t > 0")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("ig_density requires r > 0")
    out = t / _SQRT_2PI * math.exp(m * t) * r**-1.5 * np.exp(-0.5 * (t * t / r + m * m * r))
    return float(out) if out.ndim == 0 else out


def sample_ig(t: float, m: float, rng: np.random.Generator, size=None):
    """Exact draw(s) of T(t).

    m > 0 uses the Michael-Schucany-Haas transform with mu = t/m and
    lambda = t^2; m = 0 is t^2/Z^2 with Z standard normal.
    """
    if t <= 0:
        raise ValueError("sample_ig requires t > 0")
    scalar = size is None
    n = 1 if scalar else int(size)
    z = rng.standard_normal(n)
    if m == 0:
        # Z = 0 occurs with probability zero; resample to stay safe
        bad = z == 0.0
        while np.any(bad):
            z[bad] = rng.standard_normal(int(bad.sum()))
            bad = z == 0.0
        out = t * t / (z * z)
    else:
        mu = t / m
        lam = t * t
        nu = z * z
        w = mu * nu
        x = mu + 0.5 * mu / lam * (w - np.sqrt(w * (4.0 * lam + w)))
        u = rng.random(n)
        out = np.where(u <= mu / (mu + x), x, mu * mu / x)
    return float(out[0]) if scalar else out


def sigma_density(r, m: float):
    """Lévy measure density sigma^m(r) of the subordinator."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("sigma_density requires r > 0")
    out = r**-1.5 * np.exp(-0.5 * m * m * r) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


def sigma_tail(eps_t: float) -> float:
    """int_{eps_t}^inf sigma^0(r) dr = sqrt(2/pi) / sqrt(eps_t)."""
    if eps_t <= 0:
        raise ValueError("sigma_tail requires eps_t > 0")
    return math.sqrt(2.0 / math.pi) / math.sqrt(eps_t)


def sub_drift(eps_t: float) -> float:
    """Exact mean of the omitted small jumps: int_0^{eps_t} r sigma^0(dr)."""
    return math.sqrt(2.0 * eps_t / math.pi)


def sample_sub_path(t_max: float, eps_t: float, rng: np.random.Generator) -> SubPath:
    """Truncated skeleton of T on [0, t_max] under the m = 0 law.

    Count ~ Poisson(t_max * sigma_tail(eps_t)), sizes by exact inverse CDF
    r = eps_t / U^2, times uniform, plus the small-jump drift.
    """
    if t_max <= 0 or eps_t <= 0:
        raise ValueError("t_max and eps_t must be > 0")
    n = int(rng.poisson(sigma_tail(eps_t) * t_max))
    times = np.sort(rng.random(n)) * t_max
    sizes = eps_t / rng.random(n) ** 2
    return SubPath(horizon=t_max, eps_t=eps_t, drift=sub_drift(eps_t), times=times, sizes=sizes)


@dataclass
class FlatSubBatch:
    """Skeletons of many subordinator paths in flat CSR-style arrays."""

    horizon: float
    eps_t: float
    drift: float
    offsets: np.ndarray
    times: np.ndarray
    sizes: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.offsets.size - 1

    def path(self, i: int) -> SubPath:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return SubPath(self.horizon, self.eps_t, self.drift,
                       self.times[lo:hi], self.sizes[lo:hi])


def sample_sub_block(t_max: float, eps_t: float, rngs: list) -> FlatSubBatch:
    """One skeleton per generator; generators are advanced in place so the
    caller can keep drawing (e.g. Brownian increments) from the same streams."""
    rate = sigma_tail(eps_t)
    counts = np.empty(len(rngs), dtype=np.int64)
    times_l, sizes_l = [], []
    for j, rng in enumerate(rngs):
        n = int(rng.poisson(rate * t_max))
        counts[j] = n
        times_l.append(np.sort(rng.random(n)) * t_max)
        sizes_l.append(eps_t / rng.random(n) ** 2)
    offsets = np.zeros(len(rngs) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    empty = np.zeros(0)
    return FlatSubBatch(
        horizon=t_max,
        eps_t=eps_t,
        drift=sub_drift(eps_t),
        offsets=offsets,
        times=np.concatenate(times_l) if times_l else empty,
        sizes=np.concatenate(sizes_l) if sizes_l else empty,
    )


def levy_exponent(p, m: float):
    """Lévy exponent zeta_m(p) with E[e^{i p T(t)}] = e^{-t zeta_m(p)}.

    zeta_0(0) is 0 by convention; as m -> 0 the exponent tends to
    zeta_0(p) = sqrt(|p|) (1 - i sign p).
    """
    p_arr = np.asarray(p, dtype=float)
    scalar = p_arr.ndim == 0
    p_arr = np.atleast_1d(p_arr)
    out = np.empty(p_arr.shape, dtype=complex)
    zero = (p_arr == 0.0) & (m == 0.0)
    s = np.sqrt(m**4 + 4.0 * p_arr * p_arr)
    root = np.sqrt(m * m + s)
    with np.errstate(divide="ignore", invalid="ignore"):
        re = 2.0 * math.sqrt(2.0) * p_arr * p_arr / ((root + math.sqrt(2.0) * m) * (m * m + s))
        im = math.sqrt(2.0) * p_arr / root
    out.real = np.where(zero, 0.0, re)
    out.imag = np.where(zero, 0.0, -im)
    return complex(out[0]) if scalar else out
