"""Monte Carlo estimation of the heat semigroups, with coupled mass sweeps.

An estimate of (e^{-t[H_j - m + V]}g)(x) is the plain average of
e^{-S_j} g(x + endpoint) over sampled paths.  Two modes exist:

* ``direct``: paths are sampled at the target mass (j = 1, 2) or via the
  psi-transformed skeleton (j = 3);
* ``coupled``: one base ensemble is sampled at mass zero and pushed to each
  target mass through the jump/subordinator maps, so the whole sweep shares
  its randomness (a common-random-numbers device that also produces the
  paired differences the zero-mass-limit checks look at).

Per-sample randomness is derived from (master seed, sample index) with a
counter-based generator, work is folded over fixed-size blocks in index
order, and workers own disjoint blocks, so results are bit-identical for
any worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from . import __version__ as _VERSION
from .coupling import _ell_inv_scalar, psi, transform_batch, transformed_drift
from .fields import FieldBundle
from .functionals import BallCorrection, QuadConfig, eval_jump_flat
from .levy import LevyConfig, kernel, sample_jump_block, sphere_surface, stream_for_sample
from .subordinator import sample_sub_block

__all__ = [
    "EstimatorKnobs",
    "Estimate",
    "SweepRow",
    "L2Row",
    "estimate_semigroup",
    "coupled_mass_sweep",
    "l2_experiment",
    "free_oracle",
]


@dataclass(frozen=True)
class EstimatorKnobs:
    """Every numerical knob of a run; hashed into the config digest."""

    mode: str = "coupled"          # "coupled" | "direct"
    eps: float = 1e-3              # jump truncation radius
    eps_t: float = 1e-4            # subordinator truncation
    h: float = 1e-3                # Ito step for j = 3
    v_substeps: int = 256
    gl_order: int = 8
    ball_radial: int = 8
    ball_decades: float = 5.0
    corr_table: str = "auto"
    block_size: int = 1024
    workers: int = 1
    max_ito_steps: int = 1 << 20   # per-sample cap; heavier tails coarsen h
    debug: bool = True

    def quad(self) -> QuadConfig:
        return QuadConfig(
            gl_order=self.gl_order,
            ball_radial=self.ball_radial,
            ball_decades=self.ball_decades,
            corr_table=self.corr_table,
            v_substeps=self.v_substeps,
            debug=self.debug,
        )


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with its standard error and provenance digest."""

    mean: complex
    stderr: float
    n_samples: int
    config_digest: str
    se_re: float = 0.0
    se_im: float = 0.0
    rejected: int = 0


@dataclass(frozen=True)
class SweepRow:
    """Per-mass estimate plus the paired difference against the m = 0 leg.

    ``step_se`` is the standard error of (previous row's paired diff minus
    this row's), computed from per-sample covariances on the shared paths.
    """

    m: float
    estimate: Estimate
    paired_diff: Estimate
    step_se: float | None = None


@dataclass(frozen=True)
class L2Row:
    m: float
    l2: float
    l2_se: float
    step_se: float | None
    point_means: np.ndarray
    point_ses: np.ndarray


class RunError(RuntimeError):
    """Raised when a run violates its own sanity policy (rejections etc.)."""


# ---------------------------------------------------------------------------
# run plan
# ---------------------------------------------------------------------------

@dataclass
class _Plan:
    j: int
    x_points: np.ndarray           # (nx, d)
    t: float
    masses: tuple                  # decreasing; includes the 0 leg last for sweeps
    fields: FieldBundle
    payoff: object
    n: int
    knobs: EstimatorKnobs
    seed: int
    digest: str
    balls: list = field(default_factory=list)

    def prepare(self):
        quad = self.knobs.quad()
        self.balls = []
        if self.j in (1, 2) and not self.fields.a_is_zero:
            for m in self.masses:
                if self.knobs.mode == "coupled":
                    eps_eff = _ell_inv_scalar(self.knobs.eps, m, self.d) if m > 0 else self.knobs.eps
                else:
                    eps_eff = self.knobs.eps
                self.balls.append(BallCorrection(self.j, self.d, m, eps_eff, self.fields, quad))
        return self

    @property
    def d(self) -> int:
        return self.x_points.shape[1]


@dataclass
class _BlockStats:
    sum_wg: np.ndarray       # (n_m, nx) complex
    sum_re2: np.ndarray      # (n_m, nx)
    sum_im2: np.ndarray
    sum_diff: np.ndarray     # (n_m, nx) |w_m g_m - w_0 g_0|
    sum_diff2: np.ndarray
    sum_cross: np.ndarray    # (n_m - 1, nx) consecutive-row products
    n_used: int = 0
    n_rejected: int = 0
    n_coarsened: int = 0

    @staticmethod
    def zeros(n_m: int, nx: int) -> "_BlockStats":
        return _BlockStats(
            sum_wg=np.zeros((n_m, nx), dtype=complex),
            sum_re2=np.zeros((n_m, nx)),
            sum_im2=np.zeros((n_m, nx)),
            sum_diff=np.zeros((n_m, nx)),
            sum_diff2=np.zeros((n_m, nx)),
            sum_cross=np.zeros((max(n_m - 1, 0), nx)),
        )

    def add_values(self, vals: np.ndarray) -> None:
        """Accumulate per-sample values of shape (n_m, nx, n_block)."""
        finite = np.isfinite(vals).all(axis=(0, 1))
        self.n_rejected += int((~finite).sum())
        self.n_used += int(finite.sum())
        if not np.all(finite):
            vals = vals[:, :, finite]
        self.sum_wg += vals.sum(axis=2)
        self.sum_re2 += (vals.real**2).sum(axis=2)
        self.sum_im2 += (vals.imag**2).sum(axis=2)
        diffs = np.abs(vals - vals[-1][None, :, :])
        self.sum_diff += diffs.sum(axis=2)
        self.sum_diff2 += (diffs**2).sum(axis=2)
        if diffs.shape[0] > 1:
            self.sum_cross += (diffs[:-1] * diffs[1:]).sum(axis=2)

    def merge(self, other: "_BlockStats") -> None:
        self.sum_wg += other.sum_wg
        self.sum_re2 += other.sum_re2
        self.sum_im2 += other.sum_im2
        self.sum_diff += other.sum_diff
        self.sum_diff2 += other.sum_diff2
        self.sum_cross += other.sum_cross
        self.n_used += other.n_used
        self.n_rejected += other.n_rejected
        self.n_coarsened += other.n_coarsened


# ---------------------------------------------------------------------------
# block evaluation: jump functionals (j = 1, 2)
# ---------------------------------------------------------------------------

def _path_endpoints(batch) -> np.ndarray:
    n = batch.n_paths
    path_of = np.repeat(np.arange(n), np.diff(batch.offsets))
    deltas = batch.deltas
    out = np.empty((n, batch.d))
    for dim in range(batch.d):
        out[:, dim] = np.bincount(path_of, weights=deltas[:, dim], minlength=n)
    return out


def _block_values_jump(plan: _Plan, indices: np.ndarray) -> tuple[np.ndarray, int]:
    knobs = plan.knobs
    quad = knobs.quad()
    trivial = plan.fields.a_is_zero and plan.fields.v_is_zero
    coupled = knobs.mode == "coupled"
    base_m = 0.0 if coupled else plan.masses[0]
    if not coupled and len(plan.masses) > 1:
        raise ValueError("direct mode evaluates one mass at a time")
    cfg = LevyConfig(d=plan.d, m=base_m, eps=knobs.eps)
    batch = sample_jump_block(cfg, plan.t, plan.seed, indices, need_times=not trivial)

    n_m = len(plan.masses)
    vals = np.empty((n_m, plan.x_points.shape[0], indices.size), dtype=complex)
    for k, m in enumerate(plan.masses):
        tb = transform_batch(batch, m) if coupled else batch
        ends = _path_endpoints(tb)
        g = np.asarray(plan.payoff(plan.x_points[:, None, :] + ends[None, :, :]), dtype=complex)
        if trivial:
            vals[k] = g
            continue
        ball = plan.balls[k] if plan.balls else None
        s_vals = eval_jump_flat(plan.j, plan.x_points, plan.t, tb, plan.fields, quad, ball)
        w = np.exp(-s_vals)
        if knobs.debug:
            worst = float(np.max(np.abs(w))) if w.size else 0.0
            if worst > 1.0 + 1e-9:
                raise AssertionError(f"|weight| = {worst} exceeds 1 with V >= 0")
        vals[k] = w * g
    return vals, 0


# ---------------------------------------------------------------------------
# block evaluation: subordinated functional (j = 3)
# ---------------------------------------------------------------------------

def _block_values_sub(plan: _Plan, indices: np.ndarray) -> tuple[np.ndarray, int]:
    knobs = plan.knobs
    t = plan.t
    nx = plan.x_points.shape[0]
    n_m = len(plan.masses)
    if not plan.fields.a_is_zero and plan.fields.div_a is None:
        raise ValueError("j = 3 requires div A in the field bundle")

    # phase 1: skeletons, one persistent stream per sample
    rngs = [stream_for_sample(plan.seed, int(i)) for i in indices]
    batch = sample_sub_block(t, knobs.eps_t, rngs)
    # phase 2: the size transform is vectorized over the whole block
    sizes_by_mass = np.empty((n_m, batch.sizes.size))
    drifts = np.empty(n_m)
    for k, m in enumerate(plan.masses):
        sizes_by_mass[k] = psi(batch.sizes, m) if (m > 0 and batch.sizes.size) else batch.sizes
        drifts[k] = transformed_drift(knobs.eps_t, m) if m > 0 else batch.drift

    vals = np.empty((n_m, nx, indices.size), dtype=complex)
    coarsened = 0
    if plan.fields.a_is_zero and plan.fields.v_is_zero:
        # weights are identically 1; only B at the endpoints T_m(t) is needed,
        # evaluated consistently across masses on one Brownian path
        nb = indices.size
        path_of = np.repeat(np.arange(nb), np.diff(batch.offsets))
        taus = np.empty((n_m, nb))
        for k in range(n_m):
            taus[k] = drifts[k] * t + np.bincount(path_of, weights=sizes_by_mass[k],
                                                  minlength=nb)
        z = np.empty((n_m, nb, plan.d))
        for j_loc, rng in enumerate(rngs):
            z[:, j_loc, :] = rng.standard_normal((n_m, plan.d))
        # masses decrease along k, so taus increase; guard tiny inversions
        dtau = np.diff(taus, axis=0, prepend=0.0)
        b_legs = np.cumsum(np.sqrt(np.maximum(dtau, 0.0))[:, :, None] * z, axis=0)
        g = np.asarray(
            plan.payoff(plan.x_points[None, :, None, :] + b_legs[:, None, :, :]),
            dtype=complex,
        )
        vals[:] = g
        return vals, 0

    s_base = np.linspace(0.0, t, knobs.v_substeps + 1)
    for j_loc in range(indices.size):
        lo, hi = batch.offsets[j_loc], batch.offsets[j_loc + 1]
        coarse_out = _one_sub_sample(
            plan, rngs[j_loc], batch.times[lo:hi], sizes_by_mass[:, lo:hi], drifts, s_base
        )
        vals[:, :, j_loc] = coarse_out[0]
        coarsened += coarse_out[1]
    return vals, coarsened


def _block_values(plan: _Plan, indices: np.ndarray) -> tuple[np.ndarray, int]:
    if plan.j in (1, 2):
        return _block_values_jump(plan, indices)
    return _block_values_sub(plan, indices)


def _one_sub_sample(plan, rng, jump_s, jump_sizes, drifts, s_base):
    """Evaluate all mass legs of one sample; returns ((n_m, nx) values, coarsened)."""
    t = plan.t
    knobs = plan.knobs
    d = plan.d
    n_m = jump_sizes.shape[0]
    nx = plan.x_points.shape[0]

    s_grid = np.union1d(s_base, jump_s) if jump_s.size else s_base
    # T_m on the s-grid (right-continuous at jump instants)
    k_idx = np.searchsorted(jump_s, s_grid, side="right")
    cums = np.concatenate([np.zeros((n_m, 1)), np.cumsum(jump_sizes, axis=1)], axis=1)
    t_of_s = drifts[:, None] * s_grid + cums[:, k_idx]     # (n_m, n_s)
    taus = t_of_s[:, -1]

    coarse_times = np.unique(np.concatenate([[0.0], t_of_s.ravel()]))
    incr = rng.standard_normal((coarse_times.size - 1, d)) * np.sqrt(np.diff(coarse_times))[:, None]
    b_coarse = np.vstack([np.zeros((1, d)), np.cumsum(incr, axis=0)])

    tau_pos = np.searchsorted(coarse_times, taus)
    g_legs = np.asarray(
        plan.payoff(plan.x_points[:, None, :] + b_coarse[tau_pos][None, :, :]), dtype=complex
    )  # (nx, n_m)

    s_out = np.zeros((n_m, nx), dtype=complex)
    if not plan.fields.v_is_zero:
        ds = np.diff(s_grid)
        pos = np.searchsorted(coarse_times, t_of_s[:, :-1])   # (n_m, n_s - 1)
        pts = plan.x_points[:, None, None, :] + b_coarse[pos][None, :, :, :]
        s_out += np.sum(plan.fields.V(pts) * ds, axis=-1).T   # (n_m, nx)

    coarsened = 0
    if not plan.fields.a_is_zero:
        live = np.abs(g_legs).max(axis=0) > 0.0               # legs worth integrating
        if np.any(live):
            tau_need = float(taus[live].max())
            if tau_need > 0.0:
                n_steps = int(math.ceil(tau_need / knobs.h))
                if n_steps > knobs.max_ito_steps:
                    n_steps = knobs.max_ito_steps
                    coarsened = 1
                fine = np.linspace(0.0, tau_need, n_steps + 1)[1:-1]
                keep = coarse_times <= tau_need
                times = np.union1d(coarse_times[keep], fine)
                # bridge-fill new times between coarse anchors
                b_vals = _bridge_fill(coarse_times, b_coarse, times, rng)
                db = np.diff(b_vals, axis=0)
                a_pts = plan.x_points[:, None, :] + b_vals[None, :, :]
                a_vals = plan.fields.A(a_pts)
                ito_cum = np.concatenate(
                    [np.zeros((nx, 1)), np.cumsum(np.sum(a_vals[:, :-1] * db, axis=-1), axis=1)],
                    axis=1,
                )
                div_vals = plan.fields.div_a(a_pts)
                dt_steps = np.diff(times)
                div_cum = np.concatenate(
                    [np.zeros((nx, 1)),
                     np.cumsum(0.5 * (div_vals[:, 1:] + div_vals[:, :-1]) * dt_steps, axis=1)],
                    axis=1,
                )
                leg_pos = np.searchsorted(times, taus[live])
                s_out[live] += 1j * (ito_cum[:, leg_pos] + 0.5 * div_cum[:, leg_pos]).T

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        w = np.exp(-s_out)
    if knobs.debug and w.size:
        finite = np.isfinite(w)
        if np.any(np.abs(w[finite]) > 1.0 + 1e-9):
            raise AssertionError("|weight| exceeds 1 with V >= 0 (j = 3)")
    return w * g_legs.T, coarsened


def _bridge_fill(coarse_times, coarse_values, times, rng):
    """Values on ``times`` (superset of coarse_times up to its end) by bridge."""
    from .functionals import BrownianGrid, refine_brownian

    keep = coarse_times <= times[-1] + 1e-300
    grid = BrownianGrid(times=coarse_times[keep], values=coarse_values[keep])
    new = np.setdiff1d(times, grid.times)
    if new.size:
        grid = refine_brownian(grid, new, rng)
    idx = np.searchsorted(grid.times, times)
    return grid.values[idx]


# ---------------------------------------------------------------------------
# the block runner
# ---------------------------------------------------------------------------

_WORKER_PLAN: dict = {}


def _init_worker(plan: _Plan):
    _WORKER_PLAN["plan"] = plan.prepare()


def _run_block(b: int) -> _BlockStats:
    plan = _WORKER_PLAN["plan"]
    bs = plan.knobs.block_size
    lo = b * bs
    hi = min(plan.n, lo + bs)
    indices = np.arange(lo, hi, dtype=np.int64)
    vals, coarsened = _block_values(plan, indices)
    stats = _BlockStats.zeros(len(plan.masses), plan.x_points.shape[0])
    stats.add_values(vals)
    stats.n_coarsened = coarsened
    return stats


def _run_plan(plan: _Plan) -> _BlockStats:
    n_blocks = (plan.n + plan.knobs.block_size - 1) // plan.knobs.block_size
    n_m = len(plan.masses)
    nx = plan.x_points.shape[0]
    total = _BlockStats.zeros(n_m, nx)
    if plan.knobs.workers <= 1:
        _init_worker(plan)
        for b in range(n_blocks):
            total.merge(_run_block(b))
    else:
        with ProcessPoolExecutor(
            max_workers=plan.knobs.workers, initializer=_init_worker, initargs=(plan,)
        ) as pool:
            for stats in pool.map(_run_block, range(n_blocks), chunksize=1):
                total.merge(stats)
    if total.n_rejected > 0.001 * plan.n:
        raise RunError(
            f"{total.n_rejected} of {plan.n} samples produced non-finite weights"
        )
    return total


def _digest(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _make_plan(j, x, t, masses, fields, g, n, knobs, seed) -> _Plan:
    x_points = np.atleast_2d(np.asarray(x, dtype=float))
    if x_points.shape[1] != fields.d:
        raise ValueError("x dimension does not match the field bundle")
    if j not in (1, 2, 3):
        raise ValueError("j must be 1, 2 or 3")
    if n < 2:
        raise ValueError("need at least 2 samples")
    if t < 0:
        raise ValueError("t must be >= 0")
    if knobs.mode not in ("coupled", "direct"):
        raise ValueError("mode must be 'coupled' or 'direct'")
    masses = tuple(float(m) for m in masses)
    if any(m < 0 for m in masses):
        raise ValueError("masses must be >= 0")
    payload = {
        "version": _VERSION,
        "j": j,
        "x": x_points.tolist(),
        "t": t,
        "masses": masses,
        "n": n,
        "seed": seed,
        "knobs": asdict(knobs),
        "fields": fields.spec(),
        "payoff": g.spec() if hasattr(g, "spec") else repr(g),
    }
    return _Plan(j=j, x_points=x_points, t=t, masses=masses, fields=fields,
                 payoff=g, n=n, knobs=knobs, seed=seed, digest=_digest(payload))


def _estimates_from_stats(plan: _Plan, stats: _BlockStats):
    n = stats.n_used
    mean = stats.sum_wg / n
    var_re = np.maximum(stats.sum_re2 / n - mean.real**2, 0.0) * n / max(n - 1, 1)
    var_im = np.maximum(stats.sum_im2 / n - mean.imag**2, 0.0) * n / max(n - 1, 1)
    se_re = np.sqrt(var_re / n)
    se_im = np.sqrt(var_im / n)
    se = np.sqrt((var_re + var_im) / n)

    d_mean = stats.sum_diff / n
    d_var = np.maximum(stats.sum_diff2 / n - d_mean**2, 0.0) * n / max(n - 1, 1)
    d_se = np.sqrt(d_var / n)
    cov = stats.sum_cross / n - d_mean[:-1] * d_mean[1:] if len(plan.masses) > 1 else None
    return mean, se, se_re, se_im, d_mean, d_var, d_se, cov


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def estimate_semigroup(j, x, t, m, fields: FieldBundle, g, n, knobs: EstimatorKnobs | None = None,
                       seed: int = 0) -> Estimate:
    """Monte Carlo value of (e^{-t[H_j - m + V]}g)(x).

    ``direct`` and ``coupled`` modes estimate the same quantity and agree
    within Monte Carlo error; the t = 0 case returns g(x) exactly.
    """
    knobs = knobs or EstimatorKnobs()
    plan = _make_plan(j, x, t, (float(m),), fields, g, n, knobs, seed)
    if t == 0.0:
        gx = complex(np.asarray(g(plan.x_points), dtype=complex)[0])
        return Estimate(mean=gx, stderr=0.0, n_samples=n, config_digest=plan.digest)
    stats = _run_plan(plan)
    mean, se, se_re, se_im, *_ = _estimates_from_stats(plan, stats)
    return Estimate(
        mean=complex(mean[0, 0]), stderr=float(se[0, 0]), n_samples=stats.n_used,
        config_digest=plan.digest, se_re=float(se_re[0, 0]), se_im=float(se_im[0, 0]),
        rejected=stats.n_rejected,
    )


def _sweep_masses(m_list) -> tuple:
    masses = [float(m) for m in m_list]
    if any(m <= 0 for m in masses):
        raise ValueError("sweep masses must be positive (0 is appended automatically)")
    if any(b >= a for a, b in zip(masses, masses[1:])):
        raise ValueError("sweep masses must be strictly decreasing")
    return tuple(masses) + (0.0,)


def coupled_mass_sweep(j, x, t, m_list, fields: FieldBundle, g, n,
                       knobs: EstimatorKnobs | None = None, seed: int = 0) -> list[SweepRow]:
    """Per-mass estimates plus paired differences on one shared base ensemble.

    Rows are emitted in decreasing m with the m = 0 leg appended; the m = 0
    paired difference is exactly zero because the couplings are identities
    there.
    """
    knobs = knobs or EstimatorKnobs(mode="coupled")
    if knobs.mode != "coupled":
        raise ValueError("coupled_mass_sweep requires coupled mode")
    masses = _sweep_masses(m_list)
    plan = _make_plan(j, x, t, masses, fields, g, n, knobs, seed)
    stats = _run_plan(plan)
    mean, se, se_re, se_im, d_mean, d_var, d_se, cov = _estimates_from_stats(plan, stats)
    n_used = stats.n_used
    rows = []
    for k, m in enumerate(masses):
        step_se = None
        if k > 0:
            step_var = max(d_var[k - 1, 0] + d_var[k, 0] - 2.0 * cov[k - 1, 0], 0.0)
            step_se = float(np.sqrt(step_var / n_used))
        rows.append(SweepRow(
            m=m,
            estimate=Estimate(
                mean=complex(mean[k, 0]), stderr=float(se[k, 0]), n_samples=n_used,
                config_digest=plan.digest, se_re=float(se_re[k, 0]),
                se_im=float(se_im[k, 0]), rejected=stats.n_rejected,
            ),
            paired_diff=Estimate(
                mean=complex(d_mean[k, 0]), stderr=float(d_se[k, 0]), n_samples=n_used,
                config_digest=plan.digest,
            ),
            step_se=step_se,
        ))
    return rows


def l2_experiment(j, x_grid, x_weights, t, m_list, fields: FieldBundle, g, n,
                  knobs: EstimatorKnobs | None = None, seed: int = 0) -> list[L2Row]:
    """Discrete weighted-L2 norm of the per-point paired differences.

    Same coupling discipline as the sweep, evaluated on a finite grid of
    base points with quadrature weights.
    """
    knobs = knobs or EstimatorKnobs(mode="coupled")
    if knobs.mode != "coupled":
        raise ValueError("l2_experiment requires coupled mode")
    masses = _sweep_masses(m_list)
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    w = np.asarray(x_weights, dtype=float)
    if w.shape != (x_grid.shape[0],):
        raise ValueError("x_weights must have one entry per grid point")
    plan = _make_plan(j, x_grid, t, masses, fields, g, n, knobs, seed)
    stats = _run_plan(plan)
    _, _, _, _, d_mean, d_var, d_se, cov = _estimates_from_stats(plan, stats)
    n_used = stats.n_used
    rows = []
    grads = []
    l2_vars = []
    for k, m in enumerate(masses):
        l2 = float(np.sqrt(np.sum(w * d_mean[k] ** 2)))
        grad = w * d_mean[k] / l2 if l2 > 0 else np.zeros_like(d_mean[k])
        l2_var = float(np.sum(grad**2 * d_var[k] / n_used))
        step_se = None
        if k > 0:
            # delta method on (l2_{k-1} - l2_k) with the per-point covariances
            cross = float(np.sum(grads[-1] * grad * cov[k - 1] / n_used))
            step_se = float(np.sqrt(max(l2_vars[-1] + l2_var - 2.0 * cross, 0.0)))
        rows.append(L2Row(m=m, l2=l2, l2_se=float(np.sqrt(l2_var)), step_se=step_se,
                          point_means=d_mean[k].copy(), point_ses=d_se[k].copy()))
        grads.append(grad)
        l2_vars.append(l2_var)
    return rows


# ---------------------------------------------------------------------------
# paired gauge-covariance check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaugeGap:
    """Per-sample paired gap between the gauge-shifted and phase-rotated runs.

    For j in {2, 3} the gap is Monte Carlo noise plus quadrature error; for
    a j = 1 run with non-affine A it measures the genuine covariance defect
    of the midpoint functional.
    """

    gap: complex
    se: float
    n_samples: int
    base: Estimate
    shifted: Estimate


def paired_gauge_gap(j, x, t, m, fields: FieldBundle, chi, g, n,
                     knobs: EstimatorKnobs | None = None, seed: int = 0) -> GaugeGap:
    """Estimate E[w' g'(x + end)] - e^{i chi(x)} E[w g(x + end)] on shared paths.

    The shifted run uses A + grad(chi) with payoff e^{i chi} g; path
    sampling depends only on (seed, eps, m), so the two runs see identical
    paths sample by sample and the gap's standard error reflects the
    coupling, not two independent variances.
    """
    from .fields import gauge_shift, phase_payoff

    knobs = knobs or EstimatorKnobs(mode="direct")
    plan_base = _make_plan(j, x, t, (float(m),), fields, g, n, knobs, seed).prepare()
    shifted = gauge_shift(fields, chi)
    plan_shift = _make_plan(j, x, t, (float(m),), shifted,
                            phase_payoff(g, chi, +1.0), n, knobs, seed).prepare()
    phase = np.exp(1j * complex(np.asarray(chi(plan_base.x_points))[0]))

    bs = knobs.block_size
    n_blocks = (n + bs - 1) // bs
    acc = np.zeros((3, 3))  # rows: diff, base, shifted; cols: sum_re2, sum_im2, -
    sums = np.zeros(3, dtype=complex)
    used = 0
    for b in range(n_blocks):
        indices = np.arange(b * bs, min(n, (b + 1) * bs), dtype=np.int64)
        va, _ = _block_values(plan_base, indices)
        vb, _ = _block_values(plan_shift, indices)
        diff = vb[0, 0] - phase * va[0, 0]
        finite = np.isfinite(diff)
        used += int(finite.sum())
        for row, arr in enumerate((diff, va[0, 0], vb[0, 0])):
            arr = arr[finite]
            sums[row] += arr.sum()
            acc[row, 0] += float((arr.real**2).sum())
            acc[row, 1] += float((arr.imag**2).sum())

    def _se(row: int) -> float:
        mean = sums[row] / used
        var = (acc[row, 0] / used - mean.real**2) + (acc[row, 1] / used - mean.imag**2)
        return math.sqrt(max(var, 0.0) / used)

    return GaugeGap(
        gap=complex(sums[0] / used), se=_se(0), n_samples=used,
        base=Estimate(mean=complex(sums[1] / used), stderr=_se(1), n_samples=used,
                      config_digest=plan_base.digest),
        shifted=Estimate(mean=complex(sums[2] / used), stderr=_se(2), n_samples=used,
                         config_digest=plan_shift.digest),
    )


# ---------------------------------------------------------------------------
# free-case quadrature oracle
# ---------------------------------------------------------------------------

def free_oracle(x, t: float, m: float, g, d: int) -> float:
    """Quadrature of int k_0^m(y, t) g(x + y) dy (the A = V = 0 semigroup).

    d = 1 uses adaptive quadrature to ~1e-8; d = 2, 3 use a radial adaptive
    rule with a fixed angular average.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t == 0:
        return float(np.real(g(x[None, :])[0]))

    if d == 1:
        def f(y):
            return kernel(y, t, m, d=1) * np.real(g(np.array([[x[0] + y]]))[0])
        val, _ = integrate.quad(f, -np.inf, np.inf, limit=400, epsabs=1e-12, epsrel=1e-10)
        return float(val)

    if d == 2:
        ang = 2.0 * math.pi * (np.arange(256) + 0.5) / 256
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    elif d == 3:
        nodes, weights = np.polynomial.legendre.leggauss(32)
        phi = 2.0 * math.pi * (np.arange(64) + 0.5) / 64
        ct = nodes[:, None]
        st = np.sqrt(1.0 - ct**2)
        dirs = np.stack(
            [ (st * np.cos(phi)).ravel(), (st * np.sin(phi)).ravel(),
              np.broadcast_to(ct, (32, 64)).ravel() ], axis=1)
        wts = np.broadcast_to(weights[:, None] / 2.0 / 64.0, (32, 64)).ravel()
    else:
        raise ValueError("free_oracle supports d in {1, 2, 3}")

    def radial(r):
        pts = x + r * dirs
        gv = np.real(g(pts))
        avg = float(np.mean(gv)) if d == 2 else float(np.sum(wts * gv))
        return kernel(r, t, m, d=d) * r ** (d - 1) * avg * sphere_surface(d)

    val, _ = integrate.quad(radial, 0.0, np.inf, limit=400, epsabs=1e-12, epsrel=1e-9)
    return float(val)
