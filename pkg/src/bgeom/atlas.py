"""Bounded-geometry constants, nice covers, partitions of unity and the
curvature/chart-derivative correspondence.

Everything runs inside the metric's coordinate box, which acts as a window
onto the half-space.  Radii are heuristic lower bounds: conjugate and focal
points are detected along sampled geodesics, and rays are marched no
further than ``horizon``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from ._batch import map_batched, map_tree
from .boundary_geom import boundary_norms, normal_fn
from .charts import (
    GAUSSIAN,
    _bdry_geo_init,
    _gauss_geo_init,
    collar_chart,
    comparison_envelope,
    gaussian_chart,
    newton_solve,
    pullback_jets,
    transition_from_jets,
    unit_normal,
)
from .errors import CapabilityError, CoverageError, DomainError, RadiusError, StiffnessError
from .flows import boundary_family, flow_jets, geodesic_rhs, ray_jets, taylor_derivatives, taylor_eval
from .tensor_core import _taylor_metric, curvature_norms, curvature_stack_fn, derivative_stack, norm_sq

HORIZON = 8.0
ESCAPE = 50.0
DEFAULT_BUDGET = 10_000
GL_ORDER = 8
FOCAL_RATIO = 1e-2
CONJUGATE_FRACTION = 0.02


def _require_analytic(metric):
    if metric.jet_source != "analytic":
        raise CapabilityError("charts and atlas need an analytic (traceable) metric")


# ----------------------------------------------------------------------------
# sampling and distances


def halton(dim, n, seed=0):
    """Deterministic scrambled Halton points in the unit cube."""
    if n <= 0:
        return np.zeros((0, dim))
    return qmc.Halton(d=dim, scramble=True, seed=seed).random(n)


def box_samples(lower, upper, n, seed=0):
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    return lower + halton(len(lower), n, seed) * (upper - lower)


def interior_samples(metric, n, seed=0):
    """Halton samples of the box with ``x_m > 0``."""
    lo = np.array(metric.domain.lower, float)
    hi = np.array(metric.domain.upper, float)
    xs = box_samples(lo, hi, n, seed)
    xs[:, -1] = np.maximum(xs[:, -1], 1e-6 * (hi[-1] - lo[-1]))
    return xs


def boundary_samples(metric, n, seed=0):
    lo = np.array(metric.domain.lower[:-1], float)
    hi = np.array(metric.domain.upper[:-1], float)
    us = box_samples(lo, hi, n, seed)
    return np.column_stack([us, np.zeros(n)])


@functools.lru_cache(maxsize=None)
def _segment_kernel(fn):
    t, w = np.polynomial.legendre.leggauss(GL_ORDER)
    t = jnp.asarray(0.5 * (t + 1.0))
    w = jnp.asarray(0.5 * w)

    def length(ab, theta):
        n = ab.shape[0] // 2
        a, b = ab[:n], ab[n:]
        d = b - a

        def speed(tau):
            return jnp.sqrt(d @ fn(a + tau * d, theta) @ d)

        return jnp.sum(w * jax.vmap(speed)(t))

    return jax.jit(jax.vmap(length, in_axes=(0, None)))


def segment_length(fn, theta, A, B):
    """Length of the straight coordinate segments ``A[i] -> B[i]`` (Gauss-Legendre)."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    if len(A) == 0:
        return np.zeros(0)
    return map_batched(_segment_kernel(fn), np.concatenate([A, B], axis=1), theta)


def maximal_separated_set(candidates, separation, distance=None, accepted=None):
    """Greedy maximal subset of ``candidates`` with pairwise distance >= ``separation``.

    ``distance(a, B)`` returns distances from one point to the rows of ``B``
    (Euclidean by default).  Candidates are visited in order, so the result
    is deterministic.  ``accepted`` seeds the set with earlier centres; the
    returned array contains only the newly accepted points.
    """
    candidates = np.asarray(candidates, dtype=float)
    if candidates.ndim == 1:
        candidates = candidates[:, None]
    if len(candidates) == 0:
        return candidates.copy()
    if separation <= 0:
        raise ValueError("separation must be positive")
    if distance is None:
        def distance(a, B):
            return np.linalg.norm(B - a, axis=1)
    chosen = [] if accepted is None else [np.asarray(p, float) for p in accepted]
    n_seed = len(chosen)
    for c in candidates:
        if chosen and np.any(distance(c, np.array(chosen)) < separation):
            continue
        chosen.append(c)
    out = np.array(chosen[n_seed:]) if len(chosen) > n_seed else np.zeros((0, candidates.shape[1]))
    return out


class _Separator:
    """Distance oracle for the greedy packing: metric segment lengths, with a
    Euclidean prefilter ``|dx| < separation / sqrt(lambda_min)``."""

    def __init__(self, fn, theta, lam_min, separation):
        self.fn = fn
        self.theta = theta
        self.reach = 1.05 * separation / math.sqrt(lam_min)

    def __call__(self, a, B):
        d = np.full(len(B), np.inf)
        near = np.linalg.norm(B - a, axis=1) < self.reach
        if near.any():
            idx = np.flatnonzero(near)
            d[idx] = segment_length(self.fn, self.theta, np.repeat(a[None], len(idx), 0), B[idx])
        return d


def _frames_at(metric_fn, theta, points):
    gs = map_batched(jax.jit(jax.vmap(metric_fn, in_axes=(0, None))), points, theta)
    L = np.linalg.cholesky(gs)
    return np.swapaxes(np.linalg.inv(L), 1, 2), gs


def _eigen_range(metric_fn, theta, points):
    gs = map_batched(jax.jit(jax.vmap(metric_fn, in_axes=(0, None))), points, theta)
    lam = np.linalg.eigvalsh(gs)
    return float(lam.min()), float(lam.max())


# ----------------------------------------------------------------------------
# normal coordinates for many (centre, point) pairs


def _safe_forward(run, ys):
    """Evaluate flows in one batch, falling back to rows one by one."""
    try:
        return run(ys, np.arange(len(ys)))
    except StiffnessError:
        vals, jacs = [], []
        for i in range(len(ys)):
            try:
                v, j = run(ys[i:i + 1], np.array([i]))
            except StiffnessError:
                d = ys.shape[1]
                v, j = np.full((1, d), np.nan), np.full((1, d, d), np.nan)
            vals.append(v)
            jacs.append(j)
        return np.concatenate(vals), np.concatenate(jacs)


def gaussian_coordinates(metric, centers, frames, xs):
    """Normal coordinates of ``xs[i]`` in the Gaussian chart at ``centers[i]``."""
    m = metric.dim
    if len(xs) == 0:
        return np.zeros((0, m)), np.zeros(0, bool)
    F = geodesic_rhs(metric.fn)
    g0 = metric.eval_many(centers)
    seeds = np.einsum("nij,njk,nk->ni", np.swapaxes(frames, 1, 2), g0, xs - centers)

    def forward(ys, idx):
        def run(y, local):
            sel = idx[local]
            jets = flow_jets(F, _gauss_geo_init, y, (centers[sel], frames[sel]), metric.theta, 1)
            return jets[0][:, :m], jets[1][:, :m, :]

        return _safe_forward(run, ys)

    return newton_solve(forward, xs, seeds)


def boundary_coordinates(metric, centers_u, frames_b, us):
    """Normal coordinates of boundary points ``us[i]`` in the boundary
    exponential chart at ``centers_u[i]`` (induced metric)."""
    n = metric.dim - 1
    if len(us) == 0:
        return np.zeros((0, n)), np.zeros(0, bool)
    gbar = boundary_family(metric.fn)
    F = geodesic_rhs(gbar)
    gb0 = map_batched(jax.jit(jax.vmap(gbar, in_axes=(0, None))), centers_u, metric.theta)
    seeds = np.einsum("nij,njk,nk->ni", np.swapaxes(frames_b, 1, 2), gb0, us - centers_u)

    def forward(vs, idx):
        def run(v, local):
            sel = idx[local]
            jets = flow_jets(F, _bdry_geo_init, v, (centers_u[sel], frames_b[sel]), metric.theta, 1)
            return jets[0][:, :n], jets[1][:, :n, :]

        return _safe_forward(run, vs)

    return newton_solve(forward, us, seeds)


@functools.lru_cache(maxsize=None)
def _normal_map_init(fn):
    def init(y, aux, theta):
        x0 = jnp.concatenate([y[:-1], jnp.zeros(1)])
        return jnp.concatenate([x0, y[-1] * unit_normal(fn(x0, theta))])

    return init


def collar_coordinates(metric, xs):
    """``(u, t)`` with ``x = exp_{(u, 0)}(t nu)``: foot point and normal height.

    Rows where the normal map cannot be inverted get ``t = inf``.
    """
    xs = np.atleast_2d(np.asarray(xs, float))
    m = metric.dim
    F = geodesic_rhs(metric.fn)
    init = _normal_map_init(metric.fn)
    gs = metric.eval_many(xs)
    seeds = np.column_stack([xs[:, :-1], xs[:, -1] * np.sqrt(gs[:, -1, -1])])
    aux = np.zeros((len(xs), 1))

    def forward(ys, idx):
        def run(y, local):
            jets = flow_jets(F, init, y, aux[idx[local]], metric.theta, 1)
            return jets[0][:, :m], jets[1][:, :m, :]

        return _safe_forward(run, ys)

    ys, ok = newton_solve(forward, xs, seeds)
    ok &= ys[:, -1] >= -1e-9
    t = np.where(ok, np.maximum(ys[:, -1], 0.0), np.inf)
    return ys[:, :-1], t, ok


# ----------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class GeometryConstants:
    """Estimated bounded-geometry constants (radii are heuristic lower bounds)."""

    K: int
    C_R: list
    C_l: list
    C_Rbar: list
    C_metric: list
    r_C: float
    r_inj_boundary: float
    r_i: float
    R1: float
    R2: float
    R3: float
    r0: float
    approximate: bool = False
    horizon: float = HORIZON
    diagnostics: dict = field(default_factory=dict)

    @property
    def r_m(self):
        return min(self.R1 / 2, self.R2 / 12, self.R3, self.r0 / 2)

    def as_dict(self):
        return {
            "K": self.K,
            "curvature_sup": list(self.C_R),
            "second_fundamental_form_sup": list(self.C_l),
            "boundary_curvature_sup": list(self.C_Rbar),
            "metric_derivative_sup": list(self.C_metric),
            "r_C": self.r_C,
            "r_inj_boundary": self.r_inj_boundary,
            "r_i": self.r_i,
            "R1": self.R1,
            "R2": self.R2,
            "R3": self.R3,
            "r0": self.r0,
            "r_m": self.r_m,
            "horizon": self.horizon,
            "approximate": self.approximate,
            "radii_are_heuristic_lower_bounds": True,
            "diagnostics": self.diagnostics,
        }


def _directions(dim, n):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        a = 2 * math.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(a), np.sin(a)])
    d = qmc.MultivariateNormalQMC(mean=np.zeros(dim), seed=7).random(n)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _first_bad(t_grid, bad, finite):
    """Last good time before the first flagged grid point; None if the ray escaped first."""
    for k in range(1, len(t_grid)):
        if not finite[k]:
            return None
        if bad[k]:
            return float(t_grid[k - 1])
    return float(t_grid[-1])


def _g_sqrt(fn, theta, xs):
    gs = map_batched(jax.jit(jax.vmap(fn, in_axes=(0, None))), xs, theta)
    return np.linalg.cholesky(gs)


def conjugate_radius(fn, theta, points, n_dirs=8, horizon=HORIZON, n_grid=160):
    """Smallest first-conjugate time along unit-speed rays from ``points``.

    A ray is flagged once ``det(dx/dv) <= 0`` or the smallest singular value
    of ``dx/dv`` (in an orthonormal frame at ``x``) drops below
    ``CONJUGATE_FRACTION * t``.  Rays escaping ``|x| > ESCAPE`` are skipped.
    """
    points = np.atleast_2d(points)
    dim = points.shape[1]
    F = geodesic_rhs(fn)
    grid = np.linspace(0.0, horizon, n_grid + 1)
    frames, _ = _frames_at(fn, theta, points)
    best, skipped, total = horizon, 0, 0
    for p, E in zip(points, frames):
        for d in _directions(dim, n_dirs):
            total += 1
            v = E @ d
            jets0 = [np.concatenate([p, v]), np.concatenate([np.zeros((dim, dim)), np.eye(dim)])]
            try:
                traj = ray_jets(F, theta, jets0, grid, dim, ESCAPE)
            except StiffnessError:
                skipped += 1
                continue
            X = traj[0][:, :dim]
            J = traj[1][:, :dim, :]
            finite = np.all(np.isfinite(J), axis=(1, 2))
            bad = np.zeros(len(grid), bool)
            if finite.any():
                Jf = np.where(finite[:, None, None], J, np.eye(dim))
                Xf = np.where(finite[:, None], X, p)
                L = _g_sqrt(fn, theta, Xf)
                sig = np.linalg.svd(np.swapaxes(L, 1, 2) @ Jf, compute_uv=False)[:, -1]
                bad = (np.linalg.det(Jf) <= 0) | (sig <= CONJUGATE_FRACTION * grid)
                bad[0] = False
            r = _first_bad(grid, bad, finite)
            if r is None:
                skipped += 1
                continue
            best = min(best, r)
    return best, {"rays": total, "skipped": skipped}


def collar_radius(metric, starts, horizon=HORIZON, n_grid=160, collision=0.1):
    """Normal rays from boundary ``starts``: first focal time (degenerate
    ``[d_u x, x']``) or near-collision of two rays, capped at ``horizon``."""
    m = metric.dim
    fn, theta = metric.fn, metric.theta
    F = geodesic_rhs(fn)
    nu = normal_fn(fn)
    grid = np.linspace(0.0, horizon, n_grid + 1)

    def init(u):
        x0 = jnp.concatenate([u, jnp.zeros(1)])
        return jnp.concatenate([x0, nu(u, theta)])

    dinit = jax.jit(jax.jacfwd(init))
    best, skipped = horizon, 0
    paths = []
    for x0 in np.atleast_2d(starts):
        u = jnp.asarray(x0[:-1])
        jets0 = [np.asarray(init(u)), np.asarray(dinit(u))]
        try:
            traj = ray_jets(F, theta, jets0, grid, m, ESCAPE)
        except StiffnessError:
            skipped += 1
            continue
        X = traj[0][:, :m]
        V = traj[0][:, m:]
        Du = traj[1][:, :m, :]
        finite = np.all(np.isfinite(X), axis=1)
        J = np.concatenate([Du, V[:, :, None]], axis=2)
        Jf = np.where(finite[:, None, None], J, np.eye(m))
        s = np.linalg.svd(Jf, compute_uv=False)
        bad = (np.linalg.det(Jf) <= 0) | (s[:, -1] <= FOCAL_RATIO * s[:, 0])
        bad[0] = False
        r = _first_bad(grid, bad, finite)
        if r is None:
            skipped += 1
            continue
        best = min(best, r)
        paths.append(X)
    if len(paths) > 1:
        P = np.array(paths)  # (rays, grid, m)
        d0 = np.linalg.norm(P[:, None, 0] - P[None, :, 0], axis=-1)
        np.fill_diagonal(d0, np.inf)
        for k in range(1, len(grid)):
            if grid[k] >= best:
                break
            dk = np.linalg.norm(P[:, None, k] - P[None, :, k], axis=-1)
            np.fill_diagonal(dk, np.inf)
            with np.errstate(invalid="ignore"):
                if np.any(dk < collision * d0):
                    best = float(grid[k - 1])
                    break
    return best, {"rays": len(np.atleast_2d(starts)), "skipped": skipped}


@functools.lru_cache(maxsize=None)
def _metric_jet_batch(fn, order):
    def kern(x, theta):
        return [d(x) for d in derivative_stack(lambda y: fn(y, theta), order)]

    return jax.jit(jax.vmap(kern, in_axes=(0, None)))


def estimate_constants(metric, K=1, sample_budget=None, seed=0, horizon=HORIZON, n_rays=(4, 8), n_normal=12,
                       radii=True):
    """Sup norms of curvature and second fundamental form plus radius estimates.

    ``sample_budget`` caps the number of curvature samples; a budget below
    the defaults marks the result approximate.  With ``radii=False`` no rays
    are shot and every radius is reported as ``horizon``.
    """
    _require_analytic(metric)
    if K + 2 > metric.k_max:
        raise CapabilityError(f"K={K} needs metric jets of order {K + 2} > K_max={metric.k_max}")
    n_int, n_bdy = 256, 64
    approximate = False
    if sample_budget is not None:
        want = n_int + n_bdy
        if sample_budget < want:
            approximate = True
            n_int = max(8, int(sample_budget * 0.8))
            n_bdy = max(4, int(sample_budget) - n_int)
    xs = interior_samples(metric, n_int, seed)
    C_R = curvature_norms(metric, xs, K).max(axis=0).tolist()
    C_l, C_Rbar = [0.0] * (K + 1), [0.0] * (K + 1)
    if metric.domain.has_boundary:
        xb = boundary_samples(metric, n_bdy, seed)
        ln, rn = boundary_norms(metric, xb, K)
        C_l, C_Rbar = ln.max(axis=0).tolist(), rn.max(axis=0).tolist()
    jets = map_batched(_metric_jet_batch(metric.fn, metric.k_max), xs, metric.theta)
    C_metric = [float(np.max(np.abs(j))) for j in jets]
    n_pts, n_dirs = n_rays
    r_i = r_b = r_c = horizon
    diagnostics = {"radii_estimated": bool(radii)}
    if radii:
        ray_pts = interior_samples(metric, n_pts, seed + 1)
        r_i, diagnostics["interior_rays"] = conjugate_radius(metric.fn, metric.theta, ray_pts, n_dirs, horizon)
    if radii and metric.domain.has_boundary:
        starts = boundary_samples(metric, max(n_pts, 2), seed + 2)
        r_b, diag_b = conjugate_radius(boundary_family(metric.fn), metric.theta, starts[:, :-1], n_dirs, horizon)
        diagnostics["boundary_rays"] = diag_b
        r_c, diag_c = collar_radius(metric, boundary_samples(metric, n_normal, seed + 3), horizon)
        diagnostics["normal_rays"] = diag_c
    R1, R2, R3 = 0.5 * r_b, 0.5 * r_c, 0.5 * r_i
    r0 = 0.5 * min(3 * R1 / 20, 7 * R2 / 30)
    return GeometryConstants(
        K=K,
        C_R=C_R,
        C_l=C_l,
        C_Rbar=C_Rbar,
        C_metric=C_metric,
        r_C=r_c,
        r_inj_boundary=r_b,
        r_i=r_i,
        R1=R1,
        R2=R2,
        R3=R3,
        r0=r0,
        approximate=approximate,
        horizon=horizon,
        diagnostics=diagnostics,
    )


# ----------------------------------------------------------------------------
# cover


def ball_volume(dim, r):
    """Euclidean volume of the radius-``r`` ball in R^dim."""
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * r**dim


@dataclass(frozen=True, eq=False)
class Cover:
    """Boundary cylinders ``Z(x_i, r, 2R2/3)`` (labels ``i >= 0``) and
    interior balls ``B(x_i, r)`` (labels ``i < 0``) with verification data.

    ``pairs`` holds normal coordinates of test samples in nearby cover
    sets: ``sample`` and ``center`` index rows, ``family`` is 0 for
    boundary and 1 for interior centres, ``coords`` are ``(v, t)`` or ``y``.
    """

    metric: object
    constants: GeometryConstants
    r: float
    boundary_centers: np.ndarray
    interior_centers: np.ndarray
    samples: np.ndarray
    collar_t: np.ndarray
    pairs: dict
    covered: np.ndarray
    multiplicity: int
    multiplicity_bound: float
    probe: float
    min_separation: dict
    sqrt_det_range: tuple

    @property
    def height(self):
        return 2.0 * self.constants.R2 / 3.0

    @property
    def centers(self):
        return np.concatenate([self.boundary_centers, self.interior_centers])

    @property
    def labels(self):
        nb, ni = len(self.boundary_centers), len(self.interior_centers)
        return np.concatenate([np.arange(nb), -1 - np.arange(ni)])

    @property
    def half_radius_coverage(self):
        return bool(self.covered.all())

    def as_dict(self):
        return {
            "r": self.r,
            "cylinder_height": self.height,
            "n_boundary_centers": len(self.boundary_centers),
            "n_interior_centers": len(self.interior_centers),
            "boundary_centers": self.boundary_centers.tolist(),
            "interior_centers": self.interior_centers.tolist(),
            "n_test_samples": len(self.samples),
            "half_radius_coverage": self.half_radius_coverage,
            "multiplicity": self.multiplicity,
            "multiplicity_probe_radius": self.probe,
            "multiplicity_bound": self.multiplicity_bound,
            "multiplicity_within_bound": bool(self.multiplicity <= self.multiplicity_bound),
            "min_separation": self.min_separation,
            "sqrt_det_range": list(self.sqrt_det_range),
        }


def _neighbor_pairs(points, centers, reach):
    """All ``(point, centre)`` index pairs with Euclidean distance < reach."""
    if len(points) == 0 or len(centers) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    hits = cKDTree(centers).query_ball_point(points, reach)
    si = np.repeat(np.arange(len(points)), [len(h) for h in hits])
    ci = np.concatenate([np.asarray(sorted(h), int) for h in hits]) if len(si) else np.zeros(0, int)
    return si.astype(int), ci.astype(int)


def _min_pair_separation(fn, theta, centers, sep, lam_min):
    """Smallest segment length between centres closer than the prefilter reach."""
    if len(centers) < 2:
        return math.inf
    reach = 3.0 * sep / math.sqrt(lam_min)
    pairs = np.array(sorted(cKDTree(centers).query_pairs(reach)), int).reshape(-1, 2)
    if len(pairs) == 0:
        return math.inf
    return float(segment_length(fn, theta, centers[pairs[:, 0]], centers[pairs[:, 1]]).min())


def _separated(fn, theta, candidates, separation, lam_min):
    if len(candidates) == 0:
        return np.zeros((0, candidates.shape[1]))
    return maximal_separated_set(candidates, separation, _Separator(fn, theta, lam_min, separation))


def build_cover(metric, constants, r, n_samples=1000, budget=DEFAULT_BUDGET, probe=None, seed=0):
    """Greedy cover at radius ``r`` with coverage and multiplicity checks.

    Distances for the packing are straight-segment metric lengths; coverage
    and multiplicity use normal coordinates solved by shooting.  Test samples
    join the candidate stream, so maximality covers them at half radius.
    """
    _require_analytic(metric)
    r_m = constants.r_m
    if not 0 < r < r_m:
        raise RadiusError(f"cover radius r={r} must satisfy 0 < r < r_m={r_m:.6g}")
    m = metric.dim
    fn, theta = metric.fn, metric.theta
    R2 = constants.R2
    height = 2.0 * R2 / 3.0
    probe = 0.25 * r if probe is None else float(probe)
    sep = 0.5 * r

    Z = interior_samples(metric, n_samples, seed + 11)
    zu, zt, zok = collar_coordinates(metric, Z)
    lam_min, lam_max = _eigen_range(fn, theta, np.concatenate([Z, interior_samples(metric, 64, seed + 12)]))

    # boundary family
    gbar = boundary_family(fn)
    n_b = max(budget // 4, 1)
    cand_b = boundary_samples(metric, n_b, seed + 13)[:, :-1]
    near_b = zok & (zt < height)
    cand_b = np.concatenate([cand_b, zu[near_b]])
    lo_b, hi_b = np.array(metric.domain.lower[:-1]), np.array(metric.domain.upper[:-1])
    cand_b = cand_b[np.all((cand_b >= lo_b) & (cand_b <= hi_b), axis=1)]
    lamb_min, _ = _eigen_range(gbar, theta, cand_b) if len(cand_b) else (lam_min, lam_max)
    ub = _separated(gbar, theta, cand_b, sep, lamb_min)
    xb = np.column_stack([ub, np.zeros(len(ub))]) if len(ub) else np.zeros((0, m))

    # interior family on {t >= R2/2}
    cand_i = interior_samples(metric, budget - n_b, seed + 14)
    cand_i = cand_i[math.sqrt(lam_max) * cand_i[:, -1] >= 0.5 * R2]
    if len(cand_i):
        _, ct, cok = collar_coordinates(metric, cand_i)
        cand_i = cand_i[cok & (ct >= 0.5 * R2)]
    cand_i = np.concatenate([cand_i, Z[zok & (zt >= 0.5 * R2)]])
    xi = _separated(fn, theta, cand_i, sep, lam_min)

    # normal coordinates of the test samples in nearby cover sets
    reach = 1.25 * (r + probe)
    sb, cb = _neighbor_pairs(zu, ub, reach / math.sqrt(lamb_min))
    keep = zok[sb] & (zt[sb] < height)
    sb, cb = sb[keep], cb[keep]
    si, ci = _neighbor_pairs(Z, xi, reach / math.sqrt(lam_min))
    coords = np.zeros((len(sb) + len(si), m))
    ok = np.zeros(len(sb) + len(si), bool)
    if len(sb):
        Eb, _ = _frames_at(gbar, theta, ub[cb])
        v, okb = boundary_coordinates(metric, ub[cb], Eb, zu[sb])
        coords[: len(sb)] = np.column_stack([v, zt[sb]])
        ok[: len(sb)] = okb
    if len(si):
        E, _ = _frames_at(fn, theta, xi[ci])
        y, oki = gaussian_coordinates(metric, xi[ci], E, Z[si])
        coords[len(sb):] = y
        ok[len(sb):] = oki
    family = np.concatenate([np.zeros(len(sb), int), np.ones(len(si), int)])
    pairs = {
        "sample": np.concatenate([sb, si]),
        "center": np.concatenate([cb, ci]),
        "family": family,
        "coords": coords,
        "ok": ok,
    }
    radial = _pair_radius(pairs)
    covered = np.zeros(len(Z), bool)
    np.logical_or.at(covered, pairs["sample"], ok & (radial < sep))
    if not covered.all():
        bad = Z[~covered]
        raise CoverageError(f"{len(bad)} of {len(Z)} test samples not covered at half radius", bad)
    counts = np.zeros(len(Z), int)
    np.add.at(counts, pairs["sample"], ok & (radial < r + probe))

    sd_lo, sd_hi = _cover_sqrt_det(metric, xb, xi, r, height, seed)
    vol = ball_volume
    cyl = lambda rho: sd_hi * vol(m - 1, rho) * height  # noqa: E731
    bound = (cyl(0.9 * constants.R1) + sd_hi * vol(m, 2 * constants.r0)) / (sd_lo * vol(m, r / 4))
    seps = {
        "boundary": _min_pair_separation(gbar, theta, ub, sep, lamb_min) if len(ub) else math.inf,
        "interior": _min_pair_separation(fn, theta, xi, sep, lam_min),
        "required": sep,
    }
    return Cover(
        metric=metric,
        constants=constants,
        r=float(r),
        boundary_centers=xb,
        interior_centers=xi if len(xi) else np.zeros((0, m)),
        samples=Z,
        collar_t=zt,
        pairs=pairs,
        covered=covered,
        multiplicity=int(counts.max()),
        multiplicity_bound=float(bound),
        probe=probe,
        min_separation=seps,
        sqrt_det_range=(sd_lo, sd_hi),
    )


def _pair_radius(pairs):
    c = pairs["coords"]
    rad = np.linalg.norm(c, axis=1)
    b = pairs["family"] == 0
    rad[b] = np.linalg.norm(c[b, :-1], axis=1)
    return rad


def _sqrt_det(chart, ys):
    cj = chart.jets(ys, 1)
    G = pullback_jets(cj, chart.metric, 0)[0]
    return np.sqrt(np.linalg.det(G))


def _cover_sqrt_det(metric, xb, xi, r, height, seed, n_charts=4, n=64):
    """Range of sqrt(det g~) over a few cover charts (ball and cylinder samples)."""
    vals = [np.ones(1)]
    for x in xb[:: max(1, len(xb) // n_charts)][:n_charts]:
        ch = collar_chart(metric, x, r, height, validate=False)
        vals.append(_sqrt_det(ch, _cylinder_points(metric.dim, r, min(height, 2 * r), n, seed)))
    for x in xi[:: max(1, len(xi) // n_charts)][:n_charts]:
        ch = gaussian_chart(metric, x, r, validate=False)
        vals.append(_sqrt_det(ch, _ball_points(metric.dim, r, n, seed)))
    v = np.concatenate(vals)
    return float(v.min()), float(v.max())


def _ball_points(dim, r, n, seed=0, shell=True):
    """Halton points in the closed ball, plus points on the sphere of radius ``r``."""
    h = halton(dim + 1, n, seed)
    if dim == 1:
        d = np.where(h[:, 1:] < 0.5, -1.0, 1.0)
    elif dim == 2:
        d = np.column_stack([np.cos(2 * math.pi * h[:, 1]), np.sin(2 * math.pi * h[:, 1])])
    else:
        d = norm.ppf(np.clip(h[:, 1:], 1e-9, 1 - 1e-9))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    rad = r * h[:, :1] ** (1.0 / dim)
    pts = d * rad
    if shell:
        pts = np.concatenate([pts, r * _sphere_points(dim, n)])
    return pts


def _sphere_points(dim, n):
    """Nested direction sets: any prefix of an equiangular (2D) or Halton set."""
    if dim == 1:
        return np.array([[1.0], [-1.0]] * ((n + 1) // 2))[:n]
    if dim == 2:
        k = np.arange(n)
        # bit-reversal ordering keeps every power-of-two prefix equispaced
        bits = max(1, int(math.ceil(math.log2(max(n, 2)))))
        rev = np.array([int(format(i, f"0{bits}b")[::-1], 2) for i in k]) / 2**bits
        a = 2 * math.pi * rev
        return np.column_stack([np.cos(a), np.sin(a)])
    d = norm.ppf(np.clip(halton(dim, n, 3), 1e-9, 1 - 1e-9))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _cylinder_points(dim, r, height, n, seed=0):
    h = halton(dim, n, seed)
    if dim == 2:
        v = r * (2 * h[:, :1] - 1)
    else:
        v = _ball_points(dim - 1, r, n, seed, shell=False)
    t = height * h[:, -1:]
    side = _sphere_points(dim - 1, n) * r
    edge = np.column_stack([side, height * halton(1, n, seed + 1)])
    return np.concatenate([np.column_stack([v, t]), edge])


# ----------------------------------------------------------------------------
# volumes


@dataclass(frozen=True)
class VolumeBounds:
    radius: float
    D1: float
    D2: float
    mc_volume: float
    mc_stderr: float
    center: np.ndarray
    kind: str = "ball"
    height: float | None = None

    @property
    def inside(self):
        """Monte-Carlo volume inside ``[D1, D2]`` at 3 sigma."""
        s = 3.0 * self.mc_stderr + self._ulp
        return bool(self.D1 - s <= self.mc_volume <= self.D2 + s)

    def contains(self, value):
        return bool(self.D1 - self._ulp <= value <= self.D2 + self._ulp)

    @property
    def _ulp(self):
        # rounding slack: in flat space D1 == D2 == the exact volume
        return 1e-12 * abs(self.D2)

    def as_dict(self):
        return {
            "kind": self.kind,
            "radius": self.radius,
            "height": self.height,
            "center": np.asarray(self.center).tolist(),
            "D1": self.D1,
            "D2": self.D2,
            "mc_volume": self.mc_volume,
            "mc_stderr": self.mc_stderr,
            "mc_inside_3sigma": self.inside,
        }


def _default_center(metric):
    lo = np.asarray(metric.domain.lower, float)
    hi = np.asarray(metric.domain.upper, float)
    return 0.5 * (lo + hi)


def volume_bounds(metric, constants, r, center=None, n_mc=4000, n_grid=64, seed=0, cylinder=False):
    """``D1(r) <= vol <= D2(r)`` from sqrt(det g~) extremes in a normal chart,
    with a Monte-Carlo volume of the same set.

    Balls use a Gaussian chart at ``center`` (an interior point, default the
    box centre); ``cylinder=True`` uses the collar chart at the boundary
    point below it, of height ``min(2 R2 / 3, 2 r)``.
    """
    _require_analytic(metric)
    m = metric.dim
    rng = np.random.default_rng(seed)
    p = _default_center(metric) if center is None else np.asarray(center, float)
    if cylinder:
        p = p.copy()
        p[-1] = 0.0
        h = min(2.0 * constants.R2 / 3.0, 2.0 * r)
        chart = collar_chart(metric, p, r, h, validate=False)
        d = rng.normal(size=(n_mc, m - 1))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        v = d * r * rng.uniform(size=(n_mc, 1)) ** (1.0 / (m - 1))
        ys = np.column_stack([v, h * rng.uniform(size=n_mc)])
        grid = _cylinder_points(m, r, h, n_grid, seed)
        euclid = ball_volume(m - 1, r) * h
    else:
        if r >= constants.R3:
            raise RadiusError(f"ball radius {r} must stay below R3={constants.R3:.6g}")
        h = None
        chart = gaussian_chart(metric, p, r)
        d = rng.normal(size=(n_mc, m))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        ys = d * r * rng.uniform(size=(n_mc, 1)) ** (1.0 / m)
        grid = _ball_points(m, r, n_grid, seed)
        euclid = ball_volume(m, r)
    sd = _sqrt_det(chart, np.concatenate([ys, grid]))
    mc = sd[:n_mc] * euclid
    return VolumeBounds(
        radius=float(r),
        D1=float(sd.min() * euclid),
        D2=float(sd.max() * euclid),
        mc_volume=float(mc.mean()),
        mc_stderr=float(mc.std(ddof=1) / math.sqrt(n_mc)),
        center=p,
        kind="cylinder" if cylinder else "ball",
        height=h,
    )


# ----------------------------------------------------------------------------
# partition of unity


STEP_SMOOTHNESS = 3


def _step_coefficients(n):
    """Coefficients of the degree ``2n+1`` smoothstep, lowest power first."""
    c = np.zeros(2 * n + 2)
    for k in range(n + 1):
        c[n + 1 + k] = math.comb(n + k, k) * math.comb(2 * n + 1, n - k) * (-1) ** k
    return c


_STEP = _step_coefficients(STEP_SMOOTHNESS)


def _smooth_step(x):
    """Polynomial step of class C^STEP_SMOOTHNESS: 0 for x <= 0, 1 for x >= 1."""
    x = jnp.clip(x, 0.0, 1.0)
    return jnp.polyval(jnp.asarray(_STEP[::-1]), x)


def radial_cutoff(rho, r):
    """1 on ``rho <= r/2``, 0 on ``rho >= r``."""
    return 1.0 - _smooth_step((rho - 0.5 * r) / (0.5 * r))


def collar_cutoff(t, R2):
    """1 on ``t <= R2/2``, 0 on ``t >= 2 R2 / 3``."""
    return 1.0 - _smooth_step((t - 0.5 * R2) / (R2 / 6.0))


def _cutoff(y, boundary, r, R2):
    """Cutoff of a cover set in its own normal coordinates ``y``."""
    w = jnp.where(boundary, y.at[-1].set(0.0), y)
    s = w @ w
    inner = s < (0.25 * r * r)
    rho = jnp.sqrt(jnp.where(inner, 0.25 * r * r, s))
    f = jnp.where(inner, 1.0, radial_cutoff(rho, r))
    return jnp.where(boundary, f * collar_cutoff(y[-1], R2), f)


_cutoff_batch = jax.jit(jax.vmap(_cutoff, in_axes=(0, 0, None, None)))


@functools.lru_cache(maxsize=None)
def _cutoff_jet_kernel(order):
    def kern(jets, boundary, r, R2):
        p = jets[1].shape[-1]
        return taylor_derivatives(lambda z: _cutoff(taylor_eval(jets, z), boundary, r, R2), order, p)

    return jax.jit(jax.vmap(kern, in_axes=(0, 0, None, None)))


@functools.lru_cache(maxsize=None)
def _quotient_jet_kernel(order):
    def kern(a, b):
        p = a[1].shape[-1]
        return taylor_derivatives(lambda z: taylor_eval(a, z) / taylor_eval(b, z), order, p)

    return jax.jit(jax.vmap(kern))


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """``phi_i = f_i / F`` with ``f_i`` the cutoffs of the cover sets."""

    cover: Cover
    values: np.ndarray  # (samples, centers)
    F: np.ndarray
    derivative_sup: dict
    derivative_sup_refined: dict
    profiles: dict

    @property
    def sum_error(self):
        return float(np.max(np.abs(self.values.sum(axis=1) - 1.0)))

    @property
    def range_ok(self):
        return bool(self.values.min() >= 0.0 and self.values.max() <= 1.0)

    @property
    def stable(self):
        out = True
        for k, a in self.derivative_sup.items():
            b = self.derivative_sup_refined[k]
            out &= _stable(a, b)
        return bool(out)

    def as_dict(self):
        return {
            "n_samples": int(self.values.shape[0]),
            "n_functions": int(self.values.shape[1]),
            "sum_max_error": self.sum_error,
            "sum_gate": 1e-12,
            "values_in_unit_interval": self.range_ok,
            "F_min": float(self.F.min()),
            "derivative_sup": {str(k): v for k, v in self.derivative_sup.items()},
            "derivative_sup_refined": {str(k): v for k, v in self.derivative_sup_refined.items()},
            "derivative_stable_10pct": self.stable,
            "profiles": self.profiles,
        }


def _stable(a, b, rel=0.1, floor=1e-9):
    if max(abs(a), abs(b)) <= floor:
        return True
    return bool(abs(a - b) <= rel * max(abs(a), abs(b)))


def partition_of_unity(cover, charts=None, n=32, order=2, seed=0):
    """Evaluate ``phi_i`` at the cover's test samples and estimate
    ``sup |D^a (phi_i o chart_i)|`` for ``|a| <= order`` over ``charts``
    (centre indices, default a few of each family) at n and 2n samples."""
    R2 = cover.constants.R2
    nb = len(cover.boundary_centers)
    n_centers = nb + len(cover.interior_centers)
    pr = cover.pairs
    col = np.where(pr["family"] == 0, pr["center"], nb + pr["center"])
    f = np.zeros((len(cover.samples), n_centers))
    if len(col):
        vals = map_tree(lambda t: _cutoff_batch(t[0], t[1], cover.r, R2), (pr["coords"], pr["family"] == 0))
        vals = np.where(pr["ok"], vals, 0.0)
        np.add.at(f, (pr["sample"], col), vals)
    F = f.sum(axis=1)
    if np.any(F < 1.0 - 1e-12):
        raise CoverageError("sum of cutoffs below 1", cover.samples[F < 1.0 - 1e-12])
    phi = f / F[:, None]
    if charts is None:
        charts = list(range(min(nb, 1))) + [nb + i for i in range(min(len(cover.interior_centers), 1))]
    coarse, fine = _partition_derivatives(cover, charts, n, order, seed)
    return PartitionOfUnity(
        cover=cover,
        values=phi,
        F=F,
        derivative_sup=coarse,
        derivative_sup_refined=fine,
        profiles={"radial": "1 - step((|y| - r/2)/(r/2))", "collar": "1 - step((t - R2/2)/(R2/6))",
                  "step": f"degree-{2 * STEP_SMOOTHNESS + 1} smoothstep, C^{STEP_SMOOTHNESS}"},
    )


def _cover_chart(cover, idx):
    nb = len(cover.boundary_centers)
    if idx < nb:
        return collar_chart(cover.metric, cover.boundary_centers[idx], cover.r, cover.height, validate=False)
    return gaussian_chart(cover.metric, cover.interior_centers[idx - nb], cover.r, validate=False)


def _partition_derivatives(cover, charts, n, order, seed):
    metric = cover.metric
    m = metric.dim
    nb = len(cover.boundary_centers)
    centers = cover.centers
    finite_t = cover.collar_t[np.isfinite(cover.collar_t)]
    t_top = min(cover.height, float(finite_t.max())) if len(finite_t) else cover.height
    lam_min, _ = _eigen_range(metric.fn, metric.theta, cover.samples[:64])
    reach = 1.25 * 2 * cover.r / math.sqrt(lam_min)
    built = {}
    coarse = {k: 0.0 for k in range(order + 1)}
    fine = dict(coarse)
    for i in charts:
        chart_i = built.setdefault(i, _cover_chart(cover, i))
        near = [int(j) for j in np.flatnonzero(np.linalg.norm(centers - chart_i.center, axis=1) < reach) if j != i]
        for j in near:
            built.setdefault(j, _cover_chart(cover, j))
        boundary = i < nb
        rr = 0.98 * cover.r

        def evaluate(ys, i=i, chart_i=chart_i, near=near, boundary=boundary):
            return _phi_jets(cover, i, chart_i, [(j, built[j]) for j in near], ys, order, boundary)

        def inside(ys, boundary=boundary):
            if boundary:
                return (np.linalg.norm(ys[:, :-1], axis=1) <= rr) & (ys[:, -1] >= 0) & (ys[:, -1] <= t_top)
            return np.linalg.norm(ys, axis=1) <= rr

        for count, acc in ((n, coarse), (2 * n, fine)):
            if boundary:
                ys = _cylinder_points(m, rr, t_top, count, seed)
            else:
                ys = _ball_points(m, rr, count, seed)
            sups = _polished_sup(evaluate, inside, ys, order, step=rr / math.sqrt(count))
            for k in range(order + 1):
                acc[k] = max(acc[k], sups[k])
    return coarse, fine


def _phi_jets(cover, i, chart_i, neighbours, ys, order, boundary):
    """Jets of ``phi_i`` in chart ``i`` coordinates at ``ys``."""
    m = cover.metric.dim
    ci = chart_i.jets(ys, order)
    own = [ys, np.broadcast_to(np.eye(m), (len(ys), m, m))]
    own += [np.zeros((len(ys), m) + (m,) * k) for k in range(2, order + 1)]
    nb = len(cover.boundary_centers)
    fi = _cutoff_jets(own, boundary, cover, order)
    F = [a.copy() for a in fi]
    for j, chart_j in neighbours:
        tr = transition_from_jets(chart_j, ci, order)
        if tr.empty:
            continue
        fj = _cutoff_jets(tr.jets, j < nb, cover, order)
        rows = np.flatnonzero(tr.ok)
        for k in range(order + 1):
            F[k][rows] += fj[k]
    return [np.asarray(a) for a in map_tree(lambda t: _quotient_jet_kernel(order)(*t), (fi, F))]


def _polished_sup(evaluate, inside, ys, order, step, top=2, rounds=3):
    """Per-order sup of the jet entries over ``ys``, refined by a shrinking
    local grid search around the largest samples."""
    ys = ys[inside(ys)]
    jets = evaluate(ys)
    vals = [np.abs(j).reshape(len(ys), -1).max(axis=1) for j in jets]
    sups = [float(v.max()) for v in vals]
    m = ys.shape[1]
    offsets = np.array(np.meshgrid(*[[-1.0, 0.0, 1.0]] * m, indexing="ij")).reshape(m, -1).T
    best = {k: ys[np.argsort(vals[k])[-top:]] for k in range(1, order + 1)}
    for _ in range(rounds):
        cand = np.concatenate([(b[:, None, :] + step * offsets[None]).reshape(-1, m) for b in best.values()])
        cand = cand[inside(cand)]
        if len(cand) == 0:
            break
        cj = evaluate(cand)
        for k in best:
            v = np.abs(cj[k]).reshape(len(cand), -1).max(axis=1)
            sups[k] = max(sups[k], float(v.max()))
            best[k] = cand[np.argsort(v)[-top:]]
        step *= 0.5
    return sups


def _interleave(ys, n):
    """Reorder the ``2n``-point sample so its first half is the nested coarse set."""
    fill, shell = ys[:n], ys[n:]
    h = n // 2
    return np.concatenate([fill[:h], shell[:h], fill[h:], shell[h:]])


def _cutoff_jets(jets, boundary, cover, order):
    N = len(jets[0])
    flags = np.full(N, bool(boundary))
    kern = _cutoff_jet_kernel(order)
    out = map_tree(lambda t: kern(t[0], t[1], cover.r, cover.constants.R2), (list(jets), flags))
    return [np.asarray(a) for a in out]


# ----------------------------------------------------------------------------
# coordinate-free versus coordinate-wise bounds


@functools.lru_cache(maxsize=None)
def _inverse_jet_kernel(order):
    def kern(jets):
        p = jets[1].shape[-1]
        return taylor_derivatives(lambda z: jnp.linalg.inv(taylor_eval(jets, z)), order, p)

    return jax.jit(jax.vmap(kern))


@functools.lru_cache(maxsize=None)
def _taylor_curvature_kernel(k):
    def kern(y, jets):
        gfn = lambda w: _taylor_metric(w, (y, jets))  # noqa: E731
        g = gfn(y)
        return jnp.stack([jnp.sqrt(jnp.abs(norm_sq(f(y), g))) for f in curvature_stack_fn(gfn, k)])

    return jax.jit(jax.vmap(kern))


def _chart_samples(chart, n, seed):
    """``2n`` nested samples: fill points and points on the outer shell."""
    m = chart.dim
    if chart.kind == GAUSSIAN:
        ys = _ball_points(m, 0.95 * chart.radii[0], n, seed)
    else:
        r1, r2 = chart.radii
        ys = _cylinder_points(m, 0.95 * r1, 0.95 * r2, n, seed)
    return _interleave(ys, n)


def _sym_last3(T):
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    n = T.ndim
    out = 0
    for p in perms:
        out = out + np.transpose(T, tuple(range(n - 3)) + tuple(n - 3 + q for q in p))
    return out / 6.0


def _chart_curvature(chart, ys, K, h):
    """``|nabla^k R|`` for ``k <= min(K, 1)`` computed from pullback data only.

    Third derivatives of ``g~`` come from central differences of the second.
    """
    m = chart.dim
    K = min(K, 1)
    pts = [ys]
    if K >= 1:
        for c in range(m):
            e = np.zeros(m)
            e[c] = h
            pts += [ys + e, ys - e]
    gj = pullback_jets(chart.jets(np.concatenate(pts), 3), chart.metric, 2)
    N = len(ys)
    jets = [a[:N] for a in gj]
    if K >= 1:
        D3 = np.stack([(gj[2][N * (1 + 2 * c):N * (2 + 2 * c)] - gj[2][N * (2 + 2 * c):N * (3 + 2 * c)]) / (2 * h)
                       for c in range(m)], axis=-1)
        jets.append(_sym_last3(D3))
    return np.asarray(map_tree(lambda t: _taylor_curvature_kernel(K)(*t), (ys, jets)))


def _collar_sff(chart, n, seed):
    """``|l|`` and ``|nabla-bar l|`` at ``t = 0`` from collar-chart pullback jets."""
    m = chart.dim
    r1 = chart.radii[0]
    if m == 2:
        v = 0.95 * r1 * (2 * halton(1, n, seed) - 1)
    else:
        v = _ball_points(m - 1, 0.95 * r1, n, seed, shell=False)
    ys = np.column_stack([v, np.zeros(len(v))])
    g, Dg, D2g = pullback_jets(chart.jets(ys, 3), chart.metric, 2)
    b = slice(0, m - 1)
    gb = g[:, b, b]
    gi = np.linalg.inv(gb)
    l = -0.5 * Dg[:, b, b, -1]
    dl = -0.5 * D2g[:, b, b, -1, b]  # [n, a, b, c] = d_c l_ab
    dgb = Dg[:, b, b, b]  # [n, a, b, c] = d_c g_ab
    first = 0.5 * (np.einsum("nacb->nabc", dgb) + np.einsum("nbca->nabc", dgb) - dgb)  # Gamma_{c; a b} lowered first
    G = np.einsum("nde,nabe->ndab", gi, np.einsum("ncab->nabc", first))  # G[n, d, a, b] = Gamma^d_ab
    nl = np.einsum("nabc->ncab", dl) - np.einsum("ndca,ndb->ncab", G, l) - np.einsum("ndcb,nad->ncab", G, l)
    ln = np.sqrt(np.abs(np.einsum("nab,nac,nbd,ncd->n", l, gi, gi, l)))
    nln = np.sqrt(np.abs(np.einsum("ncab,nce,naf,nbg,nefg->n", nl, gi, gi, gi, nl)))
    return ln, nln


def _family_charts(metric, constants, radius):
    """Two Gaussian and two collar charts placed symmetrically in the box."""
    lo = np.asarray(metric.domain.lower, float)
    hi = np.asarray(metric.domain.upper, float)
    mid = 0.5 * (lo + hi)
    off = np.zeros(metric.dim)
    off[:-1] = 0.25 * (hi[:-1] - lo[:-1])
    height = hi[-1] - lo[-1]
    rg = min(radius, constants.R3) if constants else radius
    rb = min(radius, constants.R1) if constants else radius
    rc = min(radius, constants.R2) if constants else radius
    specs = []
    for s in (-1.0, 1.0):
        p = mid + s * off
        p[-1] = lo[-1] + 0.6 * height
        specs.append(("gaussian", p, (rg,)))
    for s in (-1.0, 1.0):
        p = mid + s * off
        p[-1] = 0.0
        specs.append(("collar", p, (rb, rc)))
    charts, failures = [], []
    for kind, p, radii in specs:
        chart = None
        for shrink in (1.0, 0.5):
            rr = tuple(shrink * q for q in radii)
            try:
                chart = gaussian_chart(metric, p, *rr) if kind == "gaussian" else collar_chart(metric, p, *rr)
                break
            except (RadiusError, DomainError, StiffnessError) as exc:
                err = exc
        if chart is None:
            failures.append({"kind": kind, "center": p.tolist(), "error": str(err)})
        else:
            charts.append(chart)
    return charts, failures


def theorem_main_report(metric, K=1, constants=None, n=32, n_converse=8, seed=0, radius=0.25, h=1e-3):
    """Both sides of the bounded-geometry correspondence for one metric.

    Coordinate side: ``sup |D^a g~_ij|`` and ``sup |D^a g~^ij|`` for
    ``|a| <= 2`` over two Gaussian and two collar charts, at ``n`` and ``2n``
    nested samples.  Coordinate-free side: ``sup |nabla^k R|`` and
    ``sup |nabla-bar^k l|`` for ``k <= K`` from the background metric, and
    again from chart data alone (``k <= 1``).
    """
    _require_analytic(metric)
    if constants is None:
        constants = estimate_constants(metric, K=K, radii=False, sample_budget=None, seed=seed)
    charts, failures = _family_charts(metric, constants, radius)
    orders = 3
    g_sup = np.zeros((2, orders))
    gi_sup = np.zeros((2, orders))
    chart_rows = []
    Kc = min(K, 1)
    R_chart = np.zeros(Kc + 1)
    l_chart = np.zeros(2)
    for chart in charts:
        ys = _chart_samples(chart, n, seed)
        gj = pullback_jets(chart.jets(ys, 3), metric, 2)
        gij = [np.asarray(a) for a in map_tree(_inverse_jet_kernel(2), list(gj))]
        row = {"kind": chart.kind, "center": chart.center.tolist(), "radii": list(chart.radii)}
        for half, sl in ((0, slice(0, n)), (1, slice(None))):
            gs = [float(np.max(np.abs(a[sl]))) for a in gj]
            gis = [float(np.max(np.abs(a[sl]))) for a in gij]
            g_sup[half] = np.maximum(g_sup[half], gs)
            gi_sup[half] = np.maximum(gi_sup[half], gis)
            row["metric_sup" if half else "metric_sup_coarse"] = gs
            row["inverse_sup" if half else "inverse_sup_coarse"] = gis
        lam = np.linalg.eigvalsh(gj[0])
        row["eigen_range"] = [float(lam.min()), float(lam.max())]
        if chart.kind == GAUSSIAN:
            env = comparison_envelope(constants.C_R[0] / 2, 0.95 * chart.radii[0])
            row["envelope"] = list(env)
            row["inside_envelope"] = bool(lam.min() >= env[0] - 1e-6 and lam.max() <= env[1] + 1e-6)
            Rn = _chart_curvature(chart, ys[:n_converse] * 0.9, Kc, h)
            R_chart = np.maximum(R_chart, Rn.max(axis=0))
        else:
            ln, nln = _collar_sff(chart, n_converse, seed)
            l_chart = np.maximum(l_chart, [ln.max(), nln.max()])
        chart_rows.append(row)
    rows = []
    for k in range(K + 1):
        row = {
            "k": k,
            "curvature_sup": constants.C_R[k],
            "sff_sup": constants.C_l[k],
            "curvature_from_charts": float(R_chart[k]) if k <= Kc else None,
            "sff_from_charts": float(l_chart[k]) if k <= 1 and any(c.kind != GAUSSIAN for c in charts) else None,
        }
        if k < orders:
            row.update({
                "metric_sup": float(g_sup[1, k]),
                "metric_sup_coarse": float(g_sup[0, k]),
                "inverse_sup": float(gi_sup[1, k]),
                "inverse_sup_coarse": float(gi_sup[0, k]),
                "metric_stable_10pct": _stable(g_sup[0, k], g_sup[1, k]),
                "inverse_stable_10pct": _stable(gi_sup[0, k], gi_sup[1, k]),
            })
        rows.append(row)
    metric_side = [
        {"order": k, "metric_sup": float(g_sup[1, k]), "inverse_sup": float(gi_sup[1, k]),
         "stable_10pct": _stable(g_sup[0, k], g_sup[1, k]) and _stable(gi_sup[0, k], gi_sup[1, k])}
        for k in range(orders)
    ]
    free = [constants.C_R[k] for k in range(K + 1)] + [constants.C_l[k] for k in range(K + 1)]
    coord = [r["metric_sup"] for r in metric_side] + [r["inverse_sup"] for r in metric_side]
    converse = [float(x) for x in R_chart] + [float(x) for x in l_chart]
    return {
        "metric": metric.name,
        "K": K,
        "rows": rows,
        "metric_side": metric_side,
        "charts": chart_rows,
        "chart_failures": failures,
        "finite_coordinate_free": bool(np.all(np.isfinite(free))),
        "finite_coordinate": bool(np.all(np.isfinite(coord))),
        "finite_from_charts": bool(np.all(np.isfinite(converse))),
        "stable": bool(all(r["stable_10pct"] for r in metric_side)),
        "samples_per_chart": [n, 2 * n],
    }


def scaling_report(name, key, lambdas=(1.0, 2.0), dim=2, params=None, K=0, seed=0):
    """Constants of ``lambda^2 g`` realised through the family parameter ``key``
    (``scale`` for the hyperbolic slab, ``radius`` for the cap).  The ray
    horizon scales with lambda so horizon-limited radii stay comparable."""
    from .metrics import DEFAULTS, build_metric

    base = dict(DEFAULTS[name])
    base.update(params or {})
    out = []
    for lam in lambdas:
        p = dict(base)
        p[key] = base[key] * lam
        metric = build_metric(name, dim, p)
        c = estimate_constants(metric, K=K, seed=seed, horizon=HORIZON * lam, n_rays=(2, 8), n_normal=6)
        out.append({"lambda": lam, "curvature_sup": c.C_R[0], "sff_sup": c.C_l[0],
                    "r_i": c.r_i, "r_C": c.r_C, "r_inj_boundary": c.r_inj_boundary,
                    "R1": c.R1, "R2": c.R2, "R3": c.R3})
    ref = out[0]
    for row in out:
        lam = row["lambda"] / ref["lambda"]
        row["curvature_ratio"] = row["curvature_sup"] / ref["curvature_sup"] if ref["curvature_sup"] else None
        row["expected_curvature_ratio"] = lam**-2
        row["R3_ratio"] = row["R3"] / ref["R3"]
        row["expected_radius_ratio"] = lam
    return out
