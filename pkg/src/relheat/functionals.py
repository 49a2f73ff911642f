"""The three complex path weights S_1, S_2, S_3 and their building blocks.

For the jump functionals (j = 1, 2) the time integrals are exact finite
sums over the inter-jump intervals of the piecewise-constant path.  The
principal-value term is never discretized directly: combined with the
truncated compensated jump integral it reduces, by rotational symmetry of
the jump measure, to the absolutely convergent small-ball correction

    int_0^t ds int_{|y| < eps} [Abar(x + X(s), y) - A(x + X(s))] . y n^m(dy),

with Abar the midpoint value (j = 1) or the line average (j = 2).  Only
this ball quadrature and the j = 2 line quadrature carry numerical error;
both have refinement knobs.

The j = 3 weight couples a Brownian motion to a subordinator: a left-point
Ito sum for int A(x+B) dB (a midpoint rule would produce the Stratonovich
integral and silently shift by the divergence term), a trapezoid rule for
the divergence term, and an exact-in-s sum for int_0^t V(x + B(T(s))) ds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .fields import FieldBundle
from .levy import FlatJumpBatch, JumpPath, _radial_levy_density, small_ball_moment, sphere_surface
from .subordinator import SubPath

__all__ = [
    "QuadConfig",
    "BallCorrection",
    "eval_S1",
    "eval_S2",
    "eval_S3",
    "eval_jump_flat",
    "BrownianGrid",
    "make_brownian",
]


@dataclass(frozen=True)
class QuadConfig:
    """Numerical knobs for the functional evaluations."""

    gl_order: int = 8          # Gauss-Legendre order of the j=2 line average
    ball_radial: int = 8       # radial nodes of the small-ball correction
    ball_decades: float = 5.0  # radial nodes span [eps * 10^-decades, eps]
    corr_table: str = "auto"   # "auto" | "on" | "off": tabulate correction vs z (d=1)
    corr_table_halfwidth: float = 64.0
    corr_table_nodes: int = 8193
    v_substeps: int = 256      # s-resolution of the j=3 potential integral
    debug: bool = True         # run the |weight| and correction-bound assertions


def _gl01(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _direction_rule(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors and weights approximating the normalized sphere measure."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([0.5, 0.5])
    if d == 2:
        k = np.arange(16)
        ang = 2.0 * math.pi * (k + 0.5) / 16
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), np.full(16, 1.0 / 16)
    if d == 3:
        # 26-point rule: octahedron vertices, edge midpoints, cube corners
        pts, wts = [], []
        for i in range(3):
            for s in (1.0, -1.0):
                v = np.zeros(3)
                v[i] = s
                pts.append(v)
                wts.append(1.0 / 21.0)
        for i in range(3):
            for j in range(i + 1, 3):
                for si in (1.0, -1.0):
                    for sj in (1.0, -1.0):
                        v = np.zeros(3)
                        v[i], v[j] = si, sj
                        pts.append(v / math.sqrt(2.0))
                        wts.append(4.0 / 105.0)
        for sx in (1.0, -1.0):
            for sy in (1.0, -1.0):
                for sz in (1.0, -1.0):
                    pts.append(np.array([sx, sy, sz]) / math.sqrt(3.0))
                    wts.append(27.0 / 840.0)
        return np.array(pts), np.array(wts)
    raise ValueError("direction rules implemented for d in {1, 2, 3}")


class BallCorrection:
    """Evaluates z -> int_{|y|<eps} [Abar(z, y) - A(z)] . y n^m(dy).

    Product rule: ``ball_radial`` Gauss nodes on a log radial grid times a
    symmetric direction rule (the -A(z) term cancels exactly under the
    symmetric rule and is dropped).  For d = 1 the correction is a smooth
    scalar function of z, so it is tabulated on a fixed absolute lattice
    and interpolated; off-lattice queries fall back to the direct rule, so
    results do not depend on how work is batched.
    """

    def __init__(self, j: int, d: int, m: float, eps: float, fields: FieldBundle,
                 quad: QuadConfig):
        self.j = j
        self.d = d
        self.m = m
        self.eps = eps
        self.fields = fields
        self.quad = quad

        glnodes, glweights = np.polynomial.legendre.leggauss(quad.ball_radial)
        v_hi = math.log(eps)
        v_lo = v_hi - quad.ball_decades * math.log(10.0)
        v = 0.5 * (v_hi - v_lo) * (glnodes + 1.0) + v_lo
        r = np.exp(v)
        # dr = r dv; radial measure r^{d-1} n^m
        wr = 0.5 * (v_hi - v_lo) * glweights * r
        dens = _radial_levy_density(r, m, d) * r ** (d - 1)
        self.radii = r
        self.radial_w = wr * dens * sphere_surface(d)
        self.dirs, self.dir_w = _direction_rule(d)

        if j == 1:
            self.thetas = np.array([0.5])
            self.theta_w = np.array([1.0])
        else:
            self.thetas, self.theta_w = _gl01(quad.gl_order)

        alpha, const = fields.holder
        theta_factor = 0.5**alpha if j == 1 else 1.0 / (1.0 + alpha)
        self.bound = 1.05 * const * theta_factor * small_ball_moment(eps, 1.0 + alpha, d) + 1e-12

        self._table = None
        use_table = quad.corr_table == "on" or (quad.corr_table == "auto" and d == 1)
        if use_table and not fields.a_is_zero:
            half = quad.corr_table_halfwidth
            nodes = np.linspace(-half, half, quad.corr_table_nodes)
            self._tab_lo = -half
            self._tab_inv_dz = (quad.corr_table_nodes - 1) / (2.0 * half)
            self._table = self._direct(nodes[:, None])

    def _direct(self, z: np.ndarray) -> np.ndarray:
        """The product-rule sum at points z of shape (N, d)."""
        a_field = self.fields.A
        out = np.zeros(z.shape[0])
        for k in range(self.dirs.shape[0]):
            omega = self.dirs[k]
            acc = np.zeros(z.shape[0])
            for q in range(self.thetas.size):
                offs = (self.thetas[q] * self.radii)[:, None] * omega  # (n_r, d)
                for i in range(self.radii.size):
                    aval = a_field(z + offs[i])
                    acc += self.theta_w[q] * self.radial_w[i] * self.radii[i] * (aval @ omega)
            out += self.dir_w[k] * acc
        return out

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.fields.a_is_zero:
            return np.zeros(z.shape[0])
        if self._table is None:
            vals = self._direct(z)
        else:
            zz = z[:, 0]
            inside = np.abs(zz) < self.quad.corr_table_halfwidth
            vals = np.empty(zz.shape)
            pos = (zz[inside] - self._tab_lo) * self._tab_inv_dz
            idx = pos.astype(np.int64)
            frac = pos - idx
            vals[inside] = self._table[idx] * (1.0 - frac) + self._table[idx + 1] * frac
            if np.any(~inside):
                vals[~inside] = self._direct(z[~inside])
        if self.quad.debug and vals.size:
            worst = float(np.max(np.abs(vals)))
            if worst > self.bound:
                raise AssertionError(
                    f"ball correction {worst:.3e} exceeds the Hoelder bound {self.bound:.3e}"
                )
        return vals


# ---------------------------------------------------------------------------
# jump functionals on flat batches
# ---------------------------------------------------------------------------

def _path_prefix(batch: FlatJumpBatch) -> tuple[np.ndarray, np.ndarray]:
    """Within-path exclusive and inclusive jump prefix sums, flat layout."""
    deltas = batch.deltas
    n = batch.n_paths
    inclusive = np.cumsum(deltas, axis=0)
    starts = np.zeros((n, batch.d))
    nonzero = batch.offsets[:-1] > 0
    starts[nonzero] = inclusive[batch.offsets[:-1][nonzero] - 1]
    path_of = np.repeat(np.arange(n), np.diff(batch.offsets))
    inclusive -= starts[path_of]
    exclusive = inclusive - deltas
    return exclusive, inclusive


def eval_jump_flat(
    j: int,
    x_points: np.ndarray,
    t: float,
    batch: FlatJumpBatch,
    fields: FieldBundle,
    quad: QuadConfig,
    ball: BallCorrection | None = None,
) -> np.ndarray:
    """S_j(x, t) for j in {1, 2} over a flat batch: returns (n_x, n_paths).

    Exact in time; the only numerical error is the ball correction rule and
    (for j = 2) the line-average quadrature.
    """
    if j not in (1, 2):
        raise ValueError("eval_jump_flat handles j in {1, 2}")
    if t > batch.horizon * (1.0 + 1e-12):
        raise ValueError("evaluation time exceeds the sampled horizon")
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    nx = x_points.shape[0]
    n = batch.n_paths
    out = np.zeros((nx, n), dtype=complex)
    if fields.a_is_zero and fields.v_is_zero:
        return out

    deltas = batch.deltas
    exclusive, inclusive = _path_prefix(batch)
    path_of = np.repeat(np.arange(n), np.diff(batch.offsets))
    live = batch.times <= t

    if not fields.a_is_zero:
        if j == 1:
            thetas, theta_w = np.array([0.5]), np.array([1.0])
        else:
            thetas, theta_w = _gl01(quad.gl_order)
        jump_sum = np.zeros((nx, n))
        base = exclusive
        for ix in range(nx):
            acc = np.zeros(deltas.shape[0])
            for q in range(thetas.size):
                pts = x_points[ix] + base + thetas[q] * deltas
                acc += theta_w[q] * np.sum(fields.A(pts) * deltas, axis=-1)
            jump_sum[ix] = np.bincount(path_of, weights=np.where(live, acc, 0.0), minlength=n)
        out += 1j * jump_sum

    # segment decomposition: path p occupies rows seg_off[p] .. seg_off[p+1]-1,
    # row seg_off[p] is the initial X = 0 segment
    counts = np.diff(batch.offsets)
    seg_off = batch.offsets + np.arange(n + 1)
    n_seg = int(seg_off[-1])
    seg_pos = np.zeros((n_seg, batch.d))
    jump_rows = np.arange(deltas.shape[0]) + path_of + 1
    seg_pos[jump_rows] = inclusive
    seg_path = np.repeat(np.arange(n), counts + 1)

    seg_t0 = np.zeros(n_seg)
    seg_t0[jump_rows] = batch.times
    seg_t1 = np.empty(n_seg)
    seg_t1[: n_seg - 1] = seg_t0[1:]
    seg_t1[seg_off[1:] - 1] = batch.horizon
    dur = np.clip(np.minimum(seg_t1, t) - np.minimum(seg_t0, t), 0.0, None)

    if not fields.v_is_zero:
        v_sum = np.empty((nx, n))
        for ix in range(nx):
            vals = fields.V(x_points[ix] + seg_pos) * dur
            v_sum[ix] = np.bincount(seg_path, weights=vals, minlength=n)
        out += v_sum

    if not fields.a_is_zero:
        if ball is None:
            ball = BallCorrection(j, batch.d, batch.m, batch.eps, fields, quad)
        corr = np.empty((nx, n))
        for ix in range(nx):
            vals = ball(x_points[ix] + seg_pos) * dur
            corr[ix] = np.bincount(seg_path, weights=vals, minlength=n)
        out += 1j * corr
    return out


def _single(j: int, x, t: float, path: JumpPath, fields: FieldBundle,
            quad: QuadConfig | None) -> complex:
    if t > path.horizon * (1.0 + 1e-12):
        raise ValueError("evaluation time exceeds the path horizon")
    quad = quad or QuadConfig()
    batch = FlatJumpBatch(
        horizon=path.horizon, eps=path.eps, m=path.m, d=path.d,
        offsets=np.array([0, path.times.size], dtype=np.int64),
        times=path.times,
        radii=np.linalg.norm(path.deltas, axis=1),
        dirs=path.deltas / np.maximum(np.linalg.norm(path.deltas, axis=1)[:, None], 1e-300),
    )
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return complex(eval_jump_flat(j, x[None, :], t, batch, fields, quad)[0, 0])


def eval_S1(x, t: float, path: JumpPath, fields: FieldBundle,
            quad: QuadConfig | None = None) -> complex:
    """Midpoint-rule jump weight S_1: Im part sums A(x + X(s-) + Delta/2) . Delta
    plus the small-ball correction; Re part is the exact piecewise V integral."""
    return _single(1, x, t, path, fields, quad)


def eval_S2(x, t: float, path: JumpPath, fields: FieldBundle,
            quad: QuadConfig | None = None) -> complex:
    """Line-average jump weight S_2: as S_1 with A(.+Delta/2) . Delta replaced by
    (int_0^1 A(. + theta Delta) dtheta) . Delta, by Gauss-Legendre."""
    return _single(2, x, t, path, fields, quad)


# ---------------------------------------------------------------------------
# Brownian grids
# ---------------------------------------------------------------------------

@dataclass
class BrownianGrid:
    """Brownian values on a sorted time grid starting at 0 with B(0) = 0."""

    times: np.ndarray
    values: np.ndarray

    def index_of(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i >= self.times.size or self.times[i] != t:
            raise ValueError(f"time {t} is not a grid point")
        return i

    def value_at(self, times) -> np.ndarray:
        idx = np.searchsorted(self.times, times)
        if np.any(idx >= self.times.size) or np.any(self.times[idx] != np.asarray(times)):
            raise ValueError("requested times are not all grid points")
        return self.values[idx]


def make_brownian(times, rng: np.random.Generator, d: int = 1) -> BrownianGrid:
    """Exact Gaussian increments on a sorted grid; times[0] must be 0."""
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] != 0.0:
        raise ValueError("grid must start at time 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError("grid times must be strictly increasing")
    steps = np.diff(times)
    incr = rng.standard_normal((steps.size, d)) * np.sqrt(steps)[:, None]
    values = np.vstack([np.zeros((1, d)), np.cumsum(incr, axis=0)])
    return BrownianGrid(times=times, values=values)


def refine_brownian(grid: BrownianGrid, new_times, rng: np.random.Generator) -> BrownianGrid:
    """Insert new times by Brownian-bridge sampling; existing values are
    reused bit-exactly, so coupled evaluations can share one path."""
    new_times = np.asarray(new_times, dtype=float)
    new_times = np.setdiff1d(new_times, grid.times)
    if new_times.size == 0:
        return grid
    if new_times.min() <= 0.0:
        raise ValueError("refinement times must be positive")
    if new_times.max() > grid.times[-1]:
        raise ValueError("refinement beyond the grid end; extend instead")
    d = grid.values.shape[1]

    gap = np.searchsorted(grid.times, new_times) - 1  # anchor interval per point
    t_left = grid.times[gap]
    t_right = grid.times[gap + 1]
    b_left = grid.values[gap]
    b_right = grid.values[gap + 1]

    # free motion from the left anchor, vectorized over all inserted points:
    # within-gap cumulative sums of fresh increments
    first = np.ones(new_times.size, dtype=bool)
    first[1:] = gap[1:] != gap[:-1]
    prev_t = np.where(first, t_left, np.concatenate([[0.0], new_times[:-1]]))
    incr = rng.standard_normal((new_times.size, d)) * np.sqrt(new_times - prev_t)[:, None]
    w = np.cumsum(incr, axis=0)
    run_id = np.cumsum(first) - 1
    w -= (w - incr)[np.nonzero(first)[0]][run_id]

    # pin each gap's endpoint to the existing right anchor
    last = np.ones(new_times.size, dtype=bool)
    last[:-1] = first[1:]
    last_idx = np.nonzero(last)[0]
    tail_incr = rng.standard_normal((last_idx.size, d)) * np.sqrt(
        t_right[last_idx] - new_times[last_idx]
    )[:, None]
    w_end = w[last_idx] + tail_incr
    frac = ((new_times - t_left) / (t_right - t_left))[:, None]
    values_new = b_left + w + frac * (b_right[last_idx] - b_left[last_idx] - w_end)[run_id]

    merged_times = np.concatenate([grid.times, new_times])
    order = np.argsort(merged_times, kind="stable")
    values = np.empty((merged_times.size, d))
    values[order < grid.times.size] = grid.values
    values[order >= grid.times.size] = values_new
    return BrownianGrid(times=merged_times[order], values=values)


# ---------------------------------------------------------------------------
# the subordinated functional S_3
# ---------------------------------------------------------------------------

def s3_v_times(t: float, sub: SubPath, v_substeps: int) -> tuple[np.ndarray, np.ndarray]:
    """The s-grid of the potential integral and T(s) on it.

    Jump instants of T are grid points so right limits are honored; the
    drift part is resolved by v_substeps uniform substeps.
    """
    s_grid = np.linspace(0.0, t, v_substeps + 1)
    jumps = sub.times[sub.times <= t]
    s_grid = np.union1d(s_grid, jumps)
    return s_grid, sub.value(s_grid)


def eval_S3(x, t: float, bm: BrownianGrid, sub: SubPath, fields: FieldBundle,
            h: float, quad: QuadConfig | None = None) -> complex:
    """The subordinated weight S_3 at a single point.

    Requires bm to contain all subordinated times T(s) of the potential
    grid, the endpoint T(t), and a cover of [0, T(t)] with max step <= h.
    """
    quad = quad or QuadConfig()
    if t > sub.horizon * (1.0 + 1e-12):
        raise ValueError("evaluation time exceeds the subordinator horizon")
    if not fields.a_is_zero and fields.div_a is None:
        raise ValueError("j = 3 requires the divergence of A")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    tau = sub.value(t)

    s_grid, t_of_s = s3_v_times(t, sub, quad.v_substeps)
    re_part = 0.0
    if not fields.v_is_zero:
        b_at = bm.value_at(t_of_s[:-1])
        re_part = float(np.sum(fields.V(x + b_at) * np.diff(s_grid)))

    im_part = 0.0
    if not fields.a_is_zero:
        i_tau = bm.index_of(tau)
        times = bm.times[: i_tau + 1]
        if times.size > 1 and np.max(np.diff(times)) > h * (1.0 + 1e-9):
            raise ValueError("Brownian grid is coarser than the requested Ito step")
        vals = bm.values[: i_tau + 1]
        db = np.diff(vals, axis=0)
        a_left = fields.A(x + vals[:-1])
        ito = float(np.sum(a_left * db))
        div_vals = fields.div_a(x + vals)
        trap = float(np.sum(0.5 * (div_vals[1:] + div_vals[:-1]) * np.diff(times)))
        im_part = ito + 0.5 * trap
    out = 1j * im_part + re_part
    if quad.debug and fields.v_is_zero is False and re_part < -1e-12:
        raise AssertionError("negative potential integral for V >= 0")
    return complex(out)
