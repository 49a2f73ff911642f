"""Jump-process layer: Lévy density n^m, heat kernel k_0^m, path sampling.

The driving process X is the pure-jump Lévy process whose characteristic
function is exp(-t[sqrt(xi^2 + m^2) - m]).  Its Lévy measure has the radial
density

    n^m(y) = 2 (m/2pi)^{(d+1)/2} K_{(d+1)/2}(m|y|) / |y|^{(d+1)/2}     (m > 0)
    n^0(y) = Gamma((d+1)/2) / pi^{(d+1)/2} / |y|^{d+1}                 (m = 0)

Paths are sampled with jumps below a truncation radius eps discarded.  No
compensator drift is added: the omitted drift vanishes exactly because n^m
is rotationally invariant.  The resulting O(eps) bias is handled by the
functionals' small-ball correction integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .specfun import _bessel_k_impl, bessel_k_scaled, tail_bessel_integral

__all__ = [
    "LevyConfig",
    "JumpPath",
    "FlatJumpBatch",
    "levy_density",
    "kernel",
    "tail_mass",
    "sample_path",
    "sample_jump_block",
    "sphere_surface",
    "small_ball_moment",
    "cf_truncation_bias",
]


def sphere_surface(d: int) -> float:
    """Surface measure |S^{d-1}| of the unit sphere in R^d."""
    return 2.0 * math.pi ** (0.5 * d) / math.gamma(0.5 * d)


def _c_d(d: int) -> float:
    """Constant in the m=0 tail: int_{|y|>=rho} n^0 = c_d / rho."""
    return sphere_surface(d) * math.gamma(0.5 * (d + 1)) / math.pi ** (0.5 * (d + 1))


# ---------------------------------------------------------------------------
# configuration and path containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevyConfig:
    """Dimension, mass and small-jump truncation radius for the sampler."""

    d: int
    m: float
    eps: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.m < 0:
            raise ValueError("mass must be >= 0")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("truncation radius must lie in (0, 1)")


@dataclass
class JumpPath:
    """Truncated cadlag skeleton: finitely many jumps of size >= eps on [0, horizon].

    ``times`` strictly increasing in (0, horizon]; ``deltas`` has shape
    (len(times), d).  The position is X(s) = sum_{times <= s} deltas, a
    right-continuous step function with X(0) = 0.
    """

    horizon: float
    eps: float
    m: float
    times: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.deltas = np.asarray(self.deltas, dtype=float)
        if self.deltas.ndim != 2 or self.deltas.shape[0] != self.times.shape[0]:
            raise ValueError("deltas must have shape (n_jumps, d)")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("jump times must be strictly increasing")
            if self.times[0] <= 0 or self.times[-1] > self.horizon:
                raise ValueError("jump times must lie in (0, horizon]")
            radii = np.linalg.norm(self.deltas, axis=1)
            if np.any(radii < self.eps * (1.0 - 1e-12)):
                raise ValueError("all jumps must have magnitude >= eps")

    @property
    def d(self) -> int:
        return self.deltas.shape[1]

    def position(self, s: float) -> np.ndarray:
        """X(s), right-continuous."""
        k = np.searchsorted(self.times, s, side="right")
        return self.deltas[:k].sum(axis=0) if k else np.zeros(self.d)

    def endpoint(self) -> np.ndarray:
        return self.deltas.sum(axis=0) if self.times.size else np.zeros(self.d)


@dataclass
class FlatJumpBatch:
    """Jumps of many paths in flat CSR-style arrays (evaluation hot path)."""

    horizon: float
    eps: float
    m: float
    d: int
    offsets: np.ndarray        # (n_paths + 1,) int64
    times: np.ndarray          # (N,) sorted within each path
    radii: np.ndarray          # (N,)
    dirs: np.ndarray           # (N, d) unit vectors

    @property
    def n_paths(self) -> int:
        return self.offsets.size - 1

    @property
    def deltas(self) -> np.ndarray:
        return self.radii[:, None] * self.dirs

    def path(self, i: int) -> JumpPath:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return JumpPath(
            horizon=self.horizon,
            eps=self.eps,
            m=self.m,
            times=self.times[lo:hi],
            deltas=self.radii[lo:hi, None] * self.dirs[lo:hi],
        )


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------

def _radial_levy_density(r, m: float, d: int):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("density is singular at the origin; need |y| > 0")
    nu = 0.5 * (d + 1)
    if m == 0:
        return math.gamma(nu) / math.pi**nu / r ** (d + 1)
    # scaled form: underflow happens in the exp factor, not inside K
    return 2.0 * (m / (2.0 * math.pi)) ** nu * bessel_k_scaled(nu, m * r) * np.exp(-m * r) / r**nu


def levy_density(y, m: float, d: int | None = None):
    """Jump intensity density n^m(y) for y != 0.

    ``y`` is a point in R^d (last axis = coordinates) or, when ``d`` is
    given and y is scalar/1-d, a batch of radial distances.
    """
    y = np.asarray(y, dtype=float)
    if d is None:
        if y.ndim == 0:
            raise ValueError("pass a vector, or give d explicitly for radial input")
        d = y.shape[-1]
        r = np.linalg.norm(y, axis=-1)
    else:
        r = np.abs(y) if y.ndim else abs(float(y))
    out = _radial_levy_density(r, m, d)
    return float(out) if np.ndim(out) == 0 else out


def kernel(y, t: float, m: float, d: int | None = None):
    """Transition density k_0^m(y, t) of X(t) (equals the law of B(T(t)))."""
    if t <= 0:
        raise ValueError("kernel requires t > 0")
    y = np.asarray(y, dtype=float)
    if d is None:
        if y.ndim == 0:
            raise ValueError("pass a vector, or give d explicitly for radial input")
        d = y.shape[-1]
        r2 = np.sum(y * y, axis=-1)
    else:
        r2 = y * y
    nu = 0.5 * (d + 1)
    s2 = r2 + t * t
    if m == 0:
        out = math.gamma(nu) / math.pi**nu * t / s2**nu
    else:
        # e^{mt} K_nu(ms) evaluated as e^{-m(s - t)} [e^{ms} K_nu(ms)]
        s = np.sqrt(s2)
        out = (2.0 * (m / (2.0 * math.pi)) ** nu * t
               * np.exp(-m * (s - t)) * bessel_k_scaled(nu, m * s) / s**nu)
    return float(out) if np.ndim(out) == 0 else out


def tail_mass(rho: float, m: float, d: int) -> float:
    """int_{|y| >= rho} n^m(y) dy."""
    if rho <= 0:
        raise ValueError("tail_mass requires rho > 0")
    if m == 0:
        return _c_d(d) / rho
    nu = 0.5 * (d + 1)
    return sphere_surface(d) * 2.0 * (m / (2.0 * math.pi)) ** nu * tail_bessel_integral(m, rho, d)


def small_ball_moment(eps: float, power: float, d: int) -> float:
    """int_{|y| < eps} |y|^power n^0(dy); dominates the n^m moment for any m."""
    if power <= 1.0:
        raise ValueError("moment diverges for power <= 1")
    nu = 0.5 * (d + 1)
    coef = sphere_surface(d) * math.gamma(nu) / math.pi**nu
    return coef * eps ** (power - 1.0) / (power - 1.0)


def cf_truncation_bias(xi_norm: float, t: float, eps: float, d: int) -> float:
    """Bound t |xi|^2 / 2 * int_{|y|<eps} |y|^2 n^m(dy) on the sampled
    characteristic function's truncation bias (any m)."""
    return 0.5 * t * xi_norm**2 * small_ball_moment(eps, 2.0, d)


# ---------------------------------------------------------------------------
# radial acceptance table for m > 0 sampling
# ---------------------------------------------------------------------------

class _AcceptTable:
    """q(x) = x^nu K_nu(x) / (2^{nu-1} Gamma(nu)) on a uniform log grid.

    The thinning probability relative to the m = 0 proposal; q decreases
    from 1 at 0+ to 0, so rejection is exact.  Tabulated once per dimension
    (the table depends only on nu) and interpolated linearly in log x.
    """

    X_LO, X_HI, N = 1e-10, 90.0, 8192

    def __init__(self, d: int):
        nu = 0.5 * (d + 1)
        self.log_lo = math.log(self.X_LO)
        self.inv_dx = (self.N - 1) / (math.log(self.X_HI) - self.log_lo)
        x = np.exp(self.log_lo + np.arange(self.N) / self.inv_dx)
        norm = 2.0 ** (nu - 1.0) * math.gamma(nu)
        self.vals = x**nu * _bessel_k_impl(nu, x, scaled=True) * np.exp(-x) / norm

    def __call__(self, x: np.ndarray) -> np.ndarray:
        pos = (np.log(np.maximum(x, self.X_LO)) - self.log_lo) * self.inv_dx
        pos = np.clip(pos, 0.0, self.N - 1.000001)
        idx = pos.astype(np.int64)
        frac = pos - idx
        q = self.vals[idx] * (1.0 - frac) + self.vals[idx + 1] * frac
        return np.where(x >= self.X_HI, 0.0, q)


_ACCEPT_TABLES: dict[int, _AcceptTable] = {}


def _accept_table(d: int) -> _AcceptTable:
    tab = _ACCEPT_TABLES.get(d)
    if tab is None:
        tab = _ACCEPT_TABLES[d] = _AcceptTable(d)
    return tab


class SamplerError(RuntimeError):
    """Rejection loop exceeded its iteration cap (check m * eps)."""


_REJECTION_CAP = 200


def _sample_radii(n: int, cfg: LevyConfig, rng: np.random.Generator) -> np.ndarray:
    """Radii from the law of |jump| conditioned on >= eps.

    m = 0: exact inverse CDF R = eps / U.  m > 0: the same proposal thinned
    with probability q(mR) <= 1.
    """
    radii = cfg.eps / rng.random(n)
    if cfg.m == 0 or n == 0:
        return radii
    table = _accept_table(cfg.d)
    reject = rng.random(n) > table(cfg.m * radii)
    rounds = 0
    while np.any(reject):
        rounds += 1
        if rounds > _REJECTION_CAP:
            raise SamplerError(
                f"radial rejection exceeded {_REJECTION_CAP} rounds at m={cfg.m}, eps={cfg.eps}"
            )
        k = int(reject.sum())
        fresh = cfg.eps / rng.random(k)
        keep = rng.random(k) <= table(cfg.m * fresh)
        idx = np.nonzero(reject)[0]
        radii[idx] = fresh
        reject[idx] = ~keep
    return radii


def _sample_dirs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if d == 1:
        return np.where(rng.random((n, 1)) < 0.5, -1.0, 1.0)
    v = rng.standard_normal((n, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # resample the (measure-zero) degenerate draws
    bad = norms[:, 0] < 1e-300
    while np.any(bad):
        v[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        bad = norms[:, 0] < 1e-300
    return v / norms


def sample_path(cfg: LevyConfig, t_max: float, rng: np.random.Generator) -> JumpPath:
    """One truncated jump path on [0, t_max] under the mass-cfg.m law.

    Jump count ~ Poisson(t_max * tail_mass(eps, m, d)); times i.i.d. uniform,
    magnitudes by exact inverse CDF of the m=0 conditional tail thinned to
    the m > 0 law, directions uniform on the sphere.
    """
    if t_max <= 0:
        raise ValueError("t_max must be > 0")
    rate = tail_mass(cfg.eps, cfg.m, cfg.d)
    n = int(rng.poisson(rate * t_max))
    times = np.sort(rng.random(n)) * t_max
    radii = _sample_radii(n, cfg, rng)
    dirs = _sample_dirs(n, cfg.d, rng)
    return JumpPath(horizon=t_max, eps=cfg.eps, m=cfg.m,
                    times=times, deltas=radii[:, None] * dirs)


def stream_for_sample(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based per-sample stream: Philox keyed by (seed, sample index)."""
    key = np.array([np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF), np.uint64(index)])
    return np.random.Generator(np.random.Philox(key=key))


def sample_jump_block(
    cfg: LevyConfig,
    t_max: float,
    master_seed: int,
    indices: np.ndarray,
    need_times: bool = True,
) -> FlatJumpBatch:
    """Sample one path per index into flat arrays; each path draws from its
    own (seed, index) stream so results do not depend on batching."""
    rate = tail_mass(cfg.eps, cfg.m, cfg.d)
    counts = np.empty(indices.size, dtype=np.int64)
    times_l, radii_l, dirs_l = [], [], []
    for j, idx in enumerate(indices):
        rng = stream_for_sample(master_seed, int(idx))
        n = int(rng.poisson(rate * t_max))
        counts[j] = n
        if need_times:
            times_l.append(np.sort(rng.random(n)) * t_max)
        radii_l.append(_sample_radii(n, cfg, rng))
        dirs_l.append(_sample_dirs(n, cfg.d, rng))
    offsets = np.zeros(indices.size + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    empty = np.zeros(0)
    return FlatJumpBatch(
        horizon=t_max,
        eps=cfg.eps,
        m=cfg.m,
        d=cfg.d,
        offsets=offsets,
        times=np.concatenate(times_l) if need_times and times_l else empty,
        radii=np.concatenate(radii_l) if radii_l else empty,
        dirs=np.concatenate(dirs_l) if dirs_l else empty.reshape(0, cfg.d),
    )
