"""Gaussian and normal-collar charts, pullback metric jets, chart transitions."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import numpy as np

from .errors import DomainError, InversionError, RadiusError
from ._batch import map_tree
from .flows import (
    boundary_family,
    flow_jets,
    frame_rhs,
    geodesic_rhs,
    taylor_derivatives,
    taylor_eval,
)
from .tensor_core import DomainSpec, curvature_norms

GAUSSIAN = "gaussian"
COLLAR = "collar"


def orthonormal_frame(g):
    """Columns ``E`` with ``E^T g E = I`` (Gram-Schmidt of the coordinate basis)."""
    L = np.linalg.cholesky(np.asarray(g, dtype=float))
    return np.linalg.inv(L).T


def unit_normal(g):
    """Inward unit normal ``g^{-1} dx_m / |dx_m|`` at a boundary point."""
    gi = jnp.linalg.inv(g)
    return gi[:, -1] / jnp.sqrt(gi[-1, -1])


# ----------------------------------------------------------------------------
# initial data of the chart flows; ``aux`` carries per-point constants


def _gauss_geo_init(y, aux, theta):
    p, E = aux
    return jnp.concatenate([p, E @ y])


def _gauss_frame_init(y, aux, theta):
    p, E = aux
    return jnp.concatenate([p, E @ y, E.ravel()])


def _bdry_geo_init(v, aux, theta):
    u0, Eb = aux
    return jnp.concatenate([u0, Eb @ v])


def _bdry_frame_init(v, aux, theta):
    u0, Eb = aux
    return jnp.concatenate([u0, Eb @ v, Eb.ravel()])


@functools.lru_cache(maxsize=None)
def _collar_inits(fn):
    """Second-stage initial data: normal geodesic at ``exp^bdry(v)`` with speed ``t nu``."""

    def common(y, aux, theta):
        v0, jets1 = aux
        m = y.shape[0]
        st = taylor_eval(jets1, y[:-1] - v0)
        u = st[: m - 1]
        x0 = jnp.concatenate([u, jnp.zeros(1)])
        nu = unit_normal(fn(x0, theta))
        return st, x0, nu

    def geo(y, aux, theta):
        _, x0, nu = common(y, aux, theta)
        return jnp.concatenate([x0, y[-1] * nu])

    def frame(y, aux, theta):
        st, x0, nu = common(y, aux, theta)
        m = y.shape[0]
        Sb = st[2 * (m - 1):].reshape(m - 1, m - 1)
        S = jnp.concatenate([jnp.concatenate([Sb, jnp.zeros((1, m - 1))], axis=0), nu[:, None]], axis=1)
        return jnp.concatenate([x0, y[-1] * nu, S.ravel()])

    return geo, frame


# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ChartJets:
    """Taylor jets of a chart at sample coordinates.

    ``x[k]`` has shape ``(N, m, m, ..., m)`` (k derivative slots); ``S[k]``
    has shape ``(N, m, m, m, ...)`` for the transported frame (columns are
    frame vectors, background components) or is ``None``.
    """

    ys: np.ndarray
    x: list
    S: list | None = None

    @property
    def order(self):
        return len(self.x) - 1

    @property
    def points(self):
        return self.x[0]

    @property
    def jacobian(self):
        return self.x[1]


@dataclass(frozen=True, eq=False)
class Chart:
    """A normal chart.  ``frame`` columns are the orthonormal basis at the
    centre in background components; for collar charts the last column is the
    inward normal and ``boundary_frame`` is the basis of the boundary in its
    own m-1 coordinates."""

    metric: object
    kind: str
    center: np.ndarray
    frame: np.ndarray
    radii: tuple
    boundary_frame: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.metric.dim

    @property
    def origin(self):
        return np.zeros(self.dim)

    def in_domain(self, ys, slack=0.0):
        ys = np.atleast_2d(ys)
        if self.kind == GAUSSIAN:
            return np.linalg.norm(ys, axis=1) < self.radii[0] + slack
        r1, r2 = self.radii
        return (np.linalg.norm(ys[:, :-1], axis=1) < r1 + slack) & (ys[:, -1] >= -slack) & (ys[:, -1] < r2 + slack)

    def jets(self, ys, order, with_frame=False):
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        metric = self.metric
        N = ys.shape[0]
        if self.kind == GAUSSIAN:
            aux = (np.repeat(self.center[None], N, 0), np.repeat(self.frame[None], N, 0))
            F = frame_rhs(metric.fn) if with_frame else geodesic_rhs(metric.fn)
            init = _gauss_frame_init if with_frame else _gauss_geo_init
            jets = flow_jets(F, init, ys, aux, metric.theta, order)
        else:
            jets = self._collar_jets(ys, order, with_frame)
        return _split(ys, jets, self.dim, with_frame)

    def _collar_jets(self, ys, order, with_frame):
        metric = self.metric
        N = ys.shape[0]
        gbar = boundary_family(metric.fn)
        u0 = self.center[:-1]
        aux1 = (np.repeat(u0[None], N, 0), np.repeat(self.boundary_frame[None], N, 0))
        vs = ys[:, :-1]
        if with_frame:
            jets1 = flow_jets(frame_rhs(gbar), _bdry_frame_init, vs, aux1, metric.theta, order)
        else:
            jets1 = flow_jets(geodesic_rhs(gbar), _bdry_geo_init, vs, aux1, metric.theta, order)
        geo, frame = _collar_inits(metric.fn)
        aux2 = (vs, jets1)
        F = frame_rhs(metric.fn) if with_frame else geodesic_rhs(metric.fn)
        return flow_jets(F, frame if with_frame else geo, ys, aux2, metric.theta, order)

    def forward(self, ys):
        return self.jets(ys, 0).points

    def inverse(self, xs, tol=1e-10, max_iter=50, strict=True):
        """Damped Newton inversion seeded by frame coordinates of the displacement."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))

        def forward(ys, _idx):
            cj = self.jets(ys, 1)
            return cj.points, cj.jacobian

        ys, ok = newton_solve(forward, xs, self._seed(xs), tol, max_iter)
        if strict and not ok.all():
            raise InversionError(f"Newton inversion failed for {int((~ok).sum())} of {len(xs)} points")
        return ys, ok

    def _seed(self, xs):
        g0 = self.metric.eval(self.center)
        if self.kind == GAUSSIAN:
            return (xs - self.center) @ (g0 @ self.frame)
        u0 = self.center[:-1]
        gb = g0[:-1, :-1]
        v = (xs[:, :-1] - u0) @ (gb @ self.boundary_frame)
        t = xs[:, -1] * math.sqrt(g0[-1, -1])
        return np.column_stack([v, t])


def newton_solve(forward, targets, seeds, tol=1e-10, max_iter=50):
    """Batched damped Newton for ``F(y) = target``.

    ``forward(ys, idx)`` returns values and Jacobians for the rows ``idx``.
    A step is halved whenever the residual grows; rows whose step falls
    below ``tol`` are converged.  Returns the solutions and a success mask.
    """
    targets = np.asarray(targets, float)
    ys = np.array(seeds, dtype=float)
    N = len(ys)
    ok = np.zeros(N, bool)
    alive = np.ones(N, bool)
    best = np.full(N, np.inf)
    prev = ys.copy()
    step = np.zeros_like(ys)
    lam = np.ones(N)
    for _ in range(max_iter):
        act = np.flatnonzero(~ok & alive)
        if act.size == 0:
            break
        vals, jac = forward(ys[act], act)
        res = targets[act] - vals
        rn = np.linalg.norm(res, axis=1)
        good = np.isfinite(rn) & (rn <= best[act])
        acc = act[good]
        if acc.size:
            best[acc] = rn[good]
            prev[acc] = ys[acc]
            J = jac[good]
            sing = ~np.all(np.isfinite(J), axis=(1, 2)) | (np.abs(np.linalg.det(J)) < 1e-300)
            J = np.where(sing[:, None, None], np.eye(J.shape[-1]), J)
            st = np.linalg.solve(J, res[good][..., None])[..., 0]
            alive[acc[sing]] = False
            step[acc] = st
            lam[acc] = 1.0
            ys[acc] = prev[acc] + st
            conv = (np.linalg.norm(st, axis=1) < tol) | (rn[good] < 1e-14)
            ok[acc[conv & ~sing]] = True
        rej = act[~good]
        if rej.size:
            lam[rej] *= 0.5
            ys[rej] = prev[rej] + lam[rej, None] * step[rej]
            alive[rej[(lam[rej] < 1e-6) | ~np.isfinite(best[rej])]] = False
    return ys, ok


def _split(ys, jets, m, with_frame):
    xj = [j[:, :m] for j in jets]
    Sj = None
    if with_frame:
        Sj = [j[:, 2 * m:].reshape((j.shape[0], m, m) + j.shape[2:]) for j in jets]
    return ChartJets(ys=ys, x=xj, S=Sj)


def _check_radius(chart, n_dir=16):
    """Reject charts whose exponential Jacobian degenerates inside the radius."""
    m = chart.dim
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(n_dir, m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if chart.kind == GAUSSIAN:
        r = chart.radii[0]
        ys = np.concatenate([0.5 * r * dirs, 0.999 * r * dirs])
    else:
        r1, r2 = chart.radii
        d = dirs[:, :-1]
        nrm = np.linalg.norm(d, axis=1, keepdims=True)
        d = np.where(nrm > 0, d / np.maximum(nrm, 1e-300), 0.0)
        t = np.abs(dirs[:, -1:]) * 0.999 * r2
        ys = np.concatenate([np.column_stack([0.999 * r1 * d, t]), np.column_stack([0.5 * r1 * d, 0.5 * t])])
    cj = chart.jets(ys, 1)
    if chart.metric.domain.has_boundary and chart.kind == GAUSSIAN and np.any(cj.points[:, -1] <= 0):
        raise RadiusError("Gaussian chart radius reaches the boundary")
    dets = np.linalg.det(cj.jacobian)
    if np.any(dets <= 0):
        raise RadiusError(f"{chart.kind} chart radius reaches a conjugate or focal point")
    return float(dets.min())


def gaussian_chart(metric, p, r3, validate=True):
    """Exponential map at an interior point ``p`` against the Cholesky frame."""
    p = metric.domain.check(p)
    if metric.domain.has_boundary and p[-1] <= 0:
        raise DomainError("Gaussian charts need an interior centre")
    E = orthonormal_frame(metric.eval(p))
    chart = Chart(metric, GAUSSIAN, p, E, (float(r3),))
    if validate:
        chart.info["min_det"] = _check_radius(chart)
    return chart


def collar_chart(metric, x_boundary, r1, r2, validate=True):
    """``(v, t) -> exp_{exp^bdry_{x'}(v)}(t nu)``; the last coordinate is ``t``."""
    xb = metric.domain.check(x_boundary)
    if abs(xb[-1]) > 0:
        raise DomainError("collar charts are centred on the boundary x_m = 0")
    g0 = metric.eval(xb)
    Eb = orthonormal_frame(g0[:-1, :-1])
    nu = np.asarray(unit_normal(jnp.asarray(g0)))
    E = np.zeros((metric.dim, metric.dim))
    E[:-1, :-1] = Eb
    E[:, -1] = nu
    chart = Chart(metric, COLLAR, xb, E, (float(r1), float(r2)), boundary_frame=Eb)
    if validate:
        chart.info["min_det"] = _check_radius(chart)
    return chart


# ----------------------------------------------------------------------------
# pullback metric


@functools.lru_cache(maxsize=None)
def _pullback_kernel(fn, order):
    def kern(xj, theta):
        p = xj[1].shape[-1]

        def G(z):
            X = taylor_eval(xj, z)
            J = jax.jacfwd(lambda w: taylor_eval(xj, w))(z)
            return J.T @ fn(X, theta) @ J

        return taylor_derivatives(G, order, p)

    return jax.jit(jax.vmap(kern, in_axes=(0, None)))


def pullback_jets(chart_jets: ChartJets, metric, order):
    """``[g~, D g~, ...]`` in chart coordinates from chart jets of order >= order+1."""
    if chart_jets.order < order + 1:
        raise ValueError("pullback jets of order k need chart jets of order k+1")
    xj = [x for x in chart_jets.x[: order + 2]]
    out = map_tree(_pullback_kernel(metric.fn, order), xj, metric.theta)
    return [np.asarray(o) for o in out]


def pullback_metric_jet(chart, ys, order):
    ys = np.atleast_2d(ys)
    return pullback_jets(chart.jets(ys, order + 1), chart.metric, order)


def gauss_lemma_residuals(chart, ys):
    """Residuals of the Gauss lemma in chart coordinates.

    Gaussian: ``g(R, R) - |y|^2`` and ``g(R, .) - <y, .>`` with ``R = y``.
    Collar: ``g(d_m, d_m) - 1`` and ``g(d_m, d_a)`` for ``a < m``.
    """
    ys = np.atleast_2d(ys)
    G = pullback_metric_jet(chart, ys, 0)[0]
    if chart.kind == GAUSSIAN:
        Gy = np.einsum("nij,nj->ni", G, ys)
        radial = np.einsum("ni,ni->n", ys, Gy) - np.einsum("ni,ni->n", ys, ys)
        orth = np.max(np.abs(Gy - ys), axis=1)
    else:
        radial = G[:, -1, -1] - 1.0
        orth = np.max(np.abs(G[:, -1, :-1]), axis=1) if chart.dim > 1 else np.zeros(len(ys))
    return {"radial": np.abs(radial), "orthogonal": orth}


@dataclass(frozen=True)
class RauchWindow:
    lambda_min: float
    lambda_max: float
    radius: float
    curvature_bound: float | None
    envelope: tuple | None
    inside: bool | None


def comparison_envelope(C, r):
    """Eigenvalue window of normal-coordinate metrics for |sec| <= C at radius r."""
    if r == 0:
        return 1.0, 1.0
    s = math.sqrt(C) * r if C > 0 else 0.0
    lo = (math.sin(s) / s) ** 2 if s > 0 else 1.0
    hi = (math.sinh(s) / s) ** 2 if s > 0 else 1.0
    return min(lo, 1.0), max(hi, 1.0)


def rauch_window(chart, samples, curvature_bound=None, tol=1e-6):
    """Extreme eigenvalues of the pullback metric over chart samples.

    For Gaussian charts each sample is compared with the constant-curvature
    envelope at its own radius; ``curvature_bound`` bounds |sectional
    curvature| and defaults to ``sup |R| / 2`` over the sample images.
    """
    ys = np.atleast_2d(samples)
    cj = chart.jets(ys, 1)
    G = pullback_jets(cj, chart.metric, 0)[0]
    lam = np.linalg.eigvalsh(G)
    radius = float(np.max(np.linalg.norm(ys, axis=1)))
    if chart.kind != GAUSSIAN:
        return RauchWindow(float(lam.min()), float(lam.max()), radius, None, None, None)
    if curvature_bound is None:
        curvature_bound = float(np.max(curvature_norms(_unchecked(chart.metric), cj.points, 0)[:, 0])) / 2
    inside = True
    for y, lv in zip(ys, lam):
        lo, hi = comparison_envelope(curvature_bound, float(np.linalg.norm(y)))
        inside &= bool(lv.min() >= lo - tol and lv.max() <= hi + tol)
    env = comparison_envelope(curvature_bound, radius)
    return RauchWindow(float(lam.min()), float(lam.max()), radius, curvature_bound, env, inside)


def _unchecked(metric):
    """The same metric on an unbounded box (chart images may leave the box)."""
    m = metric.dim
    big = 1e6
    lower = tuple([-big] * (m - 1) + [metric.domain.lower[-1]])
    upper = tuple([big] * m)
    return replace(metric, domain=DomainSpec(m, metric.domain.kind, lower, upper))


# ----------------------------------------------------------------------------
# transitions


@functools.lru_cache(maxsize=None)
def _transition_kernel(order):
    def kern(j2, j1):
        p = j2[1].shape[-1]
        x1 = j1[0]
        A = j1[1]
        Ainv = jnp.linalg.inv(A)

        def f(z):
            target = taylor_eval(j2, z) - x1
            w = Ainv @ target
            for _ in range(order + 1):
                w = Ainv @ (target - (taylor_eval(j1, w) - x1 - A @ w))
            return w

        return taylor_derivatives(f, order, p)

    return jax.jit(jax.vmap(kern))


@dataclass(frozen=True)
class Transition:
    ys: np.ndarray
    ok: np.ndarray
    jets: list
    sup: list

    @property
    def empty(self):
        return not bool(self.ok.any())

    @property
    def values(self):
        return self.jets[0]


def transition_jets(chart1, chart2, ys2, order):
    """Jets of ``f = chart1^{-1} o chart2`` at chart-2 coordinates ``ys2``."""
    ys2 = np.atleast_2d(np.asarray(ys2, float))
    return transition_from_jets(chart1, chart2.jets(ys2, order), order)


def transition_from_jets(chart1, c2, order):
    """As :func:`transition_jets`, reusing precomputed chart-2 jets ``c2``."""
    ys2 = c2.ys
    y1, ok = chart1.inverse(c2.points, strict=False)
    ok &= chart1.in_domain(y1)
    m = chart1.dim
    if not ok.any():
        empty = [np.zeros((0, m) + (m,) * k) for k in range(order + 1)]
        return Transition(ys2[:0], ok, empty, [0.0] * (order + 1))
    idx = np.flatnonzero(ok)
    c1 = chart1.jets(y1[idx], order)
    j2 = [x[idx] for x in c2.x]
    out = map_tree(lambda t: _transition_kernel(order)(*t), (j2, list(c1.x)))
    jets = [np.asarray(o) for o in out]
    jets[0] = y1[idx]
    sup = [float(np.max(np.abs(j))) for j in jets]
    return Transition(ys2[idx], ok, jets, sup)


def chart_transition(chart1, chart2, ys2=None, order=2, n=64, seed=0):
    """Transition map sampled on chart 2's domain (deterministic samples)."""
    if ys2 is None:
        ys2 = sample_chart(chart2, n, seed)
    return transition_jets(chart1, chart2, ys2, order)


def sample_chart(chart, n, seed=0, fraction=0.95):
    """Uniform samples of the chart domain (ball, or ball x interval)."""
    rng = np.random.default_rng(seed)
    m = chart.dim
    if chart.kind == GAUSSIAN:
        d = rng.normal(size=(n, m))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = chart.radii[0] * fraction * rng.uniform(size=(n, 1)) ** (1.0 / m)
        return d * r
    r1, r2 = chart.radii
    k = m - 1
    d = rng.normal(size=(n, k))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = r1 * fraction * rng.uniform(size=(n, 1)) ** (1.0 / k)
    t = r2 * fraction * rng.uniform(size=(n, 1))
    return np.column_stack([d * r, t])


def det_jacobian(chart, ys):
    return np.linalg.det(chart.jets(np.atleast_2d(ys), 1).jacobian)
