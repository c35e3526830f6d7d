"""Metric fields, derivative jets, tensor algebra and curvature.

Conventions
-----------
* Jets are lists ``[T, DT, D^2T, ...]``; derivative indices are appended
  after the value indices, so ``jet[2][i, j, a, b] = d_a d_b g_ij``.
* ``gamma[i, j, k]`` is the Christoffel symbol with
  ``nabla_{d_j} d_k = gamma[i, j, k] d_i``.
* The (0,4) curvature tensor is ``R[i, j, k, l] = g(Rm(d_i, d_j) d_l, d_k)``
  with ``Rm(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y]``.  With this choice a
  space of constant sectional curvature K has
  ``R_ijkl = K (g_ik g_jl - g_il g_jk)`` and the unit sphere has K = +1.
* Tensor components store contravariant slots first, then covariant slots.
  Covariant derivatives append the new covariant slot last.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from ._batch import map_batched
from .errors import CapabilityError, DegeneracyError, DomainError, ShapeError

HALF_SPACE = "half-space"
OPEN_INTERIOR = "open-interior"


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned coordinate box; the boundary, if any, is ``{x_m = 0}``."""

    dim: int
    kind: str
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dimension must be at least 2")
        if self.kind not in (HALF_SPACE, OPEN_INTERIOR):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError("box bounds must have one entry per coordinate")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("empty box")
        if self.kind == HALF_SPACE and self.lower[-1] != 0.0:
            raise ValueError("half-space domains start at x_m = 0")
        if self.kind == OPEN_INTERIOR and self.lower[-1] <= 0.0:
            raise ValueError("open-interior domains must stay in x_m > 0")

    @classmethod
    def half_space(cls, lower, upper):
        lower = tuple(float(v) for v in lower)
        upper = tuple(float(v) for v in upper)
        return cls(len(lower), HALF_SPACE, lower, upper)

    @property
    def has_boundary(self):
        return self.kind == HALF_SPACE

    @property
    def scale(self):
        return float(max(hi - lo for lo, hi in zip(self.lower, self.upper)))

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        inside = np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)
        if self.kind == OPEN_INTERIOR:
            inside &= x[..., -1] > self.lower[-1]
        return inside

    def check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"point has {x.shape[-1]} coordinates, expected {self.dim}")
        if not np.all(self.contains(x)):
            raise DomainError(f"point {x.tolist()} outside domain box")
        return x


# ----------------------------------------------------------------------------
# finite-difference stencils


def fornberg_weights(offsets, order):
    """Weights of the derivative of the given order at 0 on arbitrary offsets."""
    x = np.asarray(offsets, dtype=float)
    n = len(x)
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = x[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def _stencil(order, accuracy, one_sided):
    if order == 0:
        return np.array([0.0]), np.array([1.0])
    if one_sided:
        offsets = np.arange(order + accuracy, dtype=float)
    else:
        half = (2 * ((order + 1) // 2) - 1 + accuracy) // 2
        offsets = np.arange(-half, half + 1, dtype=float)
    return offsets, fornberg_weights(offsets, order)


# ----------------------------------------------------------------------------
# jet helpers


def multi_indices(dim, order):
    """Sorted axis tuples for all derivatives of exactly the given order."""
    return list(itertools.combinations_with_replacement(range(dim), order))


def alpha_of(axes, dim):
    alpha = [0] * dim
    for a in axes:
        alpha[a] += 1
    return tuple(alpha)


def jet_component(jet, alpha):
    """``D^alpha`` block of a jet given a multi-index ``alpha``."""
    axes = tuple(a for a, n in enumerate(alpha) for _ in range(n))
    block = jet[len(axes)]
    return block[(Ellipsis,) + axes]


def symmetric_fill(values, value_shape, dim, order):
    """Full symmetric derivative tensor from values on sorted axis tuples."""
    out = np.zeros(tuple(value_shape) + (dim,) * order)
    for axes, val in values.items():
        for perm in set(itertools.permutations(axes)):
            out[(Ellipsis,) + perm] = val
    return out


def _taylor_metric(x, theta):
    """Metric given by a truncated Taylor polynomial ``theta = (x0, jets)``."""
    x0, jets = theta
    z = x - x0
    out = jets[0]
    for k in range(1, len(jets)):
        term = jets[k]
        for _ in range(k):
            term = term @ z
        out = out + term / math.factorial(k)
    return out


# ----------------------------------------------------------------------------
# metric field


@dataclass(frozen=True, eq=False)
class MetricField:
    """A smooth metric ``x -> g_ij(x)`` on a coordinate domain.

    ``fn(x, theta)`` must be traceable by JAX; ``theta`` carries the numeric
    parameters so that all members of a metric family share compiled code.
    """

    domain: DomainSpec
    fn: Callable
    theta: object = field(default_factory=lambda: np.zeros(0))
    jet_source: str = "analytic"
    k_max: int = 3
    name: str = "metric"
    fd_step: float | None = None

    def __post_init__(self):
        if self.jet_source not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jet source {self.jet_source!r}")

    @property
    def dim(self):
        return self.domain.dim

    def with_jet_source(self, source):
        return replace(self, jet_source=source)

    def g(self, x):
        """JAX-traceable evaluation, used inside flows and kernels."""
        return self.fn(x, self.theta)

    def eval(self, x):
        x = self.domain.check(x)
        return np.asarray(_eval_kernel(self.fn)(jnp.asarray(x), self.theta))

    def eval_many(self, xs):
        return map_batched(_eval_batch_kernel(self.fn), np.asarray(xs, float), self.theta)

    def jet(self, x, order):
        x = self.domain.check(x)
        if order > self.k_max:
            raise CapabilityError(f"order {order} exceeds K_max={self.k_max}")
        if self.jet_source == "analytic":
            out = _jet_kernel(self.fn, order)(jnp.asarray(x), self.theta)
            return [np.asarray(o) for o in out]
        return self._fd_jet(x, order)

    @property
    def step(self):
        if self.fd_step is not None:
            return self.fd_step
        return 1e-3 * self.domain.scale

    def _fd_jet(self, x, order):
        m = self.dim
        h = self.step
        accuracy = 4
        near_boundary = self.domain.has_boundary
        blocks = [self.eval(x)]
        for k in range(1, order + 1):
            values = {}
            for axes in multi_indices(m, k):
                alpha = alpha_of(axes, m)
                stencils = []
                for a, n in enumerate(alpha):
                    if n == 0:
                        continue
                    offs, w = _stencil(n, accuracy, False)
                    if a == m - 1 and near_boundary and x[a] + offs.min() * h < 0.0:
                        offs, w = _stencil(n, accuracy, True)
                    stencils.append((a, offs, w, n))
                pts, wts = [], []
                for combo in itertools.product(*[range(len(s[1])) for s in stencils]):
                    p = x.copy()
                    wt = 1.0
                    for (a, offs, w, n), idx in zip(stencils, combo):
                        p[a] += offs[idx] * h
                        wt *= w[idx] / h**n
                    pts.append(p)
                    wts.append(wt)
                gs = self.eval_many(np.array(pts))
                values[axes] = np.tensordot(np.array(wts), gs, axes=1)
            blocks.append(symmetric_fill(values, (m, m), m, k))
        return blocks

    def local(self, x0):
        """``(fn, theta)`` describing the metric near ``x0`` for the kernels.

        Analytic metrics return themselves; finite-difference metrics return
        the Taylor polynomial of their difference jets at ``x0``.
        """
        if self.jet_source == "analytic":
            return self.fn, self.theta
        jets = self._fd_jet(np.asarray(x0, float), self.k_max)
        return _taylor_metric, (jnp.asarray(x0, dtype=float), [jnp.asarray(j) for j in jets])


@functools.lru_cache(maxsize=None)
def _eval_kernel(fn):
    return jax.jit(fn)


@functools.lru_cache(maxsize=None)
def _eval_batch_kernel(fn):
    return jax.jit(jax.vmap(fn, in_axes=(0, None)))


def derivative_stack(f, order):
    """``[f, Df, ..., D^order f]`` as functions (forward mode)."""
    fs = [f]
    for _ in range(order):
        fs.append(jax.jacfwd(fs[-1]))
    return fs


@functools.lru_cache(maxsize=None)
def _jet_kernel(fn, order):
    def kern(x, theta):
        fs = derivative_stack(lambda y: fn(y, theta), order)
        return [f(x) for f in fs]

    return jax.jit(kern)


def metric_jet(metric: MetricField, x, order):
    """``[g, Dg, ..., D^order g]`` at ``x``."""
    return metric.jet(x, order)


def inverse_metric_jet(gjet):
    """Jets of ``B = A^{-1}`` from jets of ``A`` by the iterated product rule.

    Uses ``D^t B = -B sum_{S nonempty} D^{t_S} A D^{t \\ S} B`` over subsets
    of derivative positions, which is exact polynomial algebra.
    """
    A = np.asarray(gjet[0], dtype=float)
    m = A.shape[0]
    try:
        if np.linalg.cond(A) > 1e14:
            raise np.linalg.LinAlgError
        B = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("singular metric") from exc
    dim = gjet[1].shape[-1] if len(gjet) > 1 else m
    cache = {(): B}

    def dA(axes):
        return np.asarray(gjet[len(axes)])[(Ellipsis,) + tuple(axes)]

    def dB(axes):
        key = tuple(sorted(axes))
        if key in cache:
            return cache[key]
        k = len(key)
        acc = np.zeros((m, m))
        for r in range(1, k + 1):
            for subset in itertools.combinations(range(k), r):
                rest = [key[i] for i in range(k) if i not in subset]
                acc += dA([key[i] for i in subset]) @ dB(rest)
        cache[key] = -B @ acc
        return cache[key]

    out = [B]
    for k in range(1, len(gjet)):
        values = {axes: dB(axes) for axes in multi_indices(dim, k)}
        out.append(symmetric_fill(values, (m, m), dim, k))
    return out


# ----------------------------------------------------------------------------
# JAX geometry kernels (operate on a metric function x -> g(x))


def christoffel_fn(gfn):
    def gamma(x):
        g = gfn(x)
        dg = jax.jacfwd(gfn)(x)  # dg[a, b, c] = d_c g_ab
        gi = jnp.linalg.inv(g)
        t = (
            jnp.einsum("lkj->ljk", dg)
            + jnp.einsum("ljk->ljk", dg)
            - jnp.einsum("jkl->ljk", dg)
        )
        return 0.5 * jnp.einsum("il,ljk->ijk", gi, t)

    return gamma


def riemann_fn(gfn):
    gam = christoffel_fn(gfn)
    dgam = jax.jacfwd(gam)

    def riem(x):
        G = gam(x)
        dG = dgam(x)  # dG[e, b, c, a] = d_a G^e_bc
        Q = (
            jnp.einsum("ebca->eabc", dG)
            - jnp.einsum("eacb->eabc", dG)
            + jnp.einsum("eaf,fbc->eabc", G, G)
            - jnp.einsum("ebf,fac->eabc", G, G)
        )
        return jnp.einsum("ke,eijl->ijkl", gfn(x), Q)

    return riem


def nabla_fn(tfn, gfn, upper):
    """Covariant derivative of a tensor field function with ``upper``
    contravariant slots first; the new covariant slot is appended last."""
    gam = christoffel_fn(gfn)
    dt = jax.jacfwd(tfn)

    def nab(x):
        T = tfn(x)
        G = gam(x)
        out = dt(x)
        for s in range(T.ndim):
            Tm = jnp.moveaxis(T, s, -1)
            if s < upper:
                term = jnp.tensordot(Tm, G, axes=([-1], [2]))  # (..., a, c)
                out = out + jnp.moveaxis(term, -2, s)
            else:
                term = jnp.tensordot(Tm, G, axes=([-1], [0]))  # (..., c, a)
                out = out - jnp.moveaxis(term, -1, s)
        return out

    return nab


def raise_all(T, gi, g, upper=0):
    """Fully contravariant version of ``T`` (used for norms)."""
    out = T
    for s in range(T.ndim):
        mat = g if s < upper else gi
        out = jnp.moveaxis(jnp.tensordot(mat, out, axes=([1], [s])), 0, s)
    return out


def norm_sq(T, g, upper=0):
    gi = jnp.linalg.inv(g)
    # contravariant slots are lowered with g, covariant slots raised with g^{-1}
    return jnp.sum(T * raise_all(T, gi, g, upper))


def curvature_stack_fn(gfn, k):
    """Functions ``[R, nabla R, ..., nabla^k R]`` for a metric function."""
    fns = [riemann_fn(gfn)]
    for _ in range(k):
        fns.append(nabla_fn(fns[-1], gfn, 0))
    return fns


@functools.lru_cache(maxsize=None)
def _christoffel_kernel(fn, order):
    def kern(x, theta):
        gfn = lambda y: fn(y, theta)  # noqa: E731
        return [f(x) for f in derivative_stack(christoffel_fn(gfn), order)]

    return jax.jit(kern)


@functools.lru_cache(maxsize=None)
def _curvature_kernel(fn, k):
    def kern(x, theta):
        gfn = lambda y: fn(y, theta)  # noqa: E731
        g = gfn(x)
        stack = [f(x) for f in curvature_stack_fn(gfn, k)]
        norms = jnp.stack([jnp.sqrt(jnp.abs(norm_sq(t, g))) for t in stack])
        return g, christoffel_fn(gfn)(x), stack, norms

    return jax.jit(kern)


@functools.lru_cache(maxsize=None)
def _curvature_norm_batch(fn, k):
    def kern(x, theta):
        gfn = lambda y: fn(y, theta)  # noqa: E731
        g = gfn(x)
        return jnp.stack([jnp.sqrt(jnp.abs(norm_sq(f(x), g))) for f in curvature_stack_fn(gfn, k)])

    return jax.jit(jax.vmap(kern, in_axes=(0, None)))


def christoffel(metric: MetricField, x, order=0):
    """``[Gamma, D Gamma, ...]`` up to ``order`` at ``x``."""
    x = metric.domain.check(x)
    if order + 1 > metric.k_max:
        raise CapabilityError(f"Christoffel jets of order {order} need metric order {order + 1}")
    fn, theta = metric.local(x)
    return [np.asarray(a) for a in _christoffel_kernel(fn, order)(jnp.asarray(x), theta)]


@dataclass(frozen=True)
class CurvatureBundle:
    point: np.ndarray
    metric: np.ndarray
    gamma: np.ndarray
    nabla_R: list
    norms: np.ndarray

    @property
    def R(self):
        return self.nabla_R[0]

    def symmetry_residual(self):
        R = self.R
        return float(max(
            np.max(np.abs(R + R.transpose(1, 0, 2, 3))),
            np.max(np.abs(R + R.transpose(0, 1, 3, 2))),
            np.max(np.abs(R - R.transpose(2, 3, 0, 1))),
        ))

    def bianchi_residual(self):
        R = self.R
        return float(np.max(np.abs(R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2))))

    def sectional(self, X, Y):
        X = np.asarray(X, float)
        Y = np.asarray(Y, float)
        g = self.metric
        num = np.einsum("ijkl,i,j,k,l->", self.R, X, Y, X, Y)
        den = (X @ g @ X) * (Y @ g @ Y) - (X @ g @ Y) ** 2
        return float(num / den)

    def constant_curvature_residual(self, K):
        g = self.metric
        model = K * (np.einsum("ik,jl->ijkl", g, g) - np.einsum("il,jk->ijkl", g, g))
        return float(np.max(np.abs(self.R - model)))


def riemann(metric: MetricField, x, k=0):
    """Curvature tensor and covariant derivatives up to order ``k``."""
    x = metric.domain.check(x)
    if k + 2 > metric.k_max:
        raise CapabilityError(f"nabla^{k} R needs metric jets of order {k + 2} > K_max={metric.k_max}")
    fn, theta = metric.local(x)
    g, gam, stack, norms = _curvature_kernel(fn, k)(jnp.asarray(x), theta)
    return CurvatureBundle(
        point=x,
        metric=np.asarray(g),
        gamma=np.asarray(gam),
        nabla_R=[np.asarray(s) for s in stack],
        norms=np.asarray(norms),
    )


def curvature_norms(metric: MetricField, xs, k=0):
    """``|nabla^i R|`` for ``i <= k`` at many points (analytic metrics)."""
    if k + 2 > metric.k_max:
        raise CapabilityError(f"nabla^{k} R needs metric jets of order {k + 2}")
    xs = metric.domain.check(np.atleast_2d(xs))
    if metric.jet_source != "analytic":
        return np.array([riemann(metric, x, k).norms for x in xs])
    return map_batched(_curvature_norm_batch(metric.fn, k), xs, metric.theta)


def covariant_derivative(tfn, metric: MetricField, x, upper=0):
    """``nabla T`` at ``x`` for a JAX tensor field function ``tfn``."""
    x = metric.domain.check(x)
    fn, theta = metric.local(x)
    nab = nabla_fn(tfn, lambda y: fn(y, theta), upper)
    return np.asarray(jax.jit(nab)(jnp.asarray(x)))


# ----------------------------------------------------------------------------
# pointwise tensors


@dataclass(frozen=True)
class TensorValue:
    """Components of a ``(p, q)`` tensor at a point, contravariant slots first."""

    base: np.ndarray
    valence: tuple
    comps: np.ndarray
    frame: str = "coordinate"

    def __post_init__(self):
        p, q = self.valence
        comps = np.asarray(self.comps, dtype=float)
        dim = len(np.atleast_1d(self.base))
        if comps.shape != (dim,) * (p + q):
            raise ShapeError(f"components of shape {comps.shape} do not match valence {self.valence} in dim {dim}")
        if self.frame not in ("coordinate", "synchronous"):
            raise ValueError(f"unknown frame {self.frame!r}")
        object.__setattr__(self, "comps", comps)
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))

    @property
    def dim(self):
        return self.base.shape[0]

    def _compatible(self, other):
        if other.dim != self.dim or other.frame != self.frame:
            raise ShapeError("tensors live in different spaces")

    def product(self, other):
        self._compatible(other)
        p1, q1 = self.valence
        p2, q2 = other.valence
        outer = np.multiply.outer(self.comps, other.comps)
        order = (
            list(range(p1))
            + list(range(p1 + q1, p1 + q1 + p2))
            + list(range(p1, p1 + q1))
            + list(range(p1 + q1 + p2, p1 + q1 + p2 + q2))
        )
        return TensorValue(self.base, (p1 + p2, q1 + q2), outer.transpose(order), self.frame)

    def contract(self, upper_slot, lower_slot):
        p, q = self.valence
        if not (0 <= upper_slot < p and 0 <= lower_slot < q):
            raise ShapeError("contraction slots out of range")
        comps = np.trace(self.comps, axis1=upper_slot, axis2=p + lower_slot)
        return TensorValue(self.base, (p - 1, q - 1), comps, self.frame)

    def permute(self, perm):
        """Reorder the covariant slots: new slot ``i`` is old slot ``perm[i]``."""
        p, q = self.valence
        if sorted(perm) != list(range(q)):
            raise ShapeError("not a permutation of the covariant slots")
        axes = list(range(p)) + [p + i for i in perm]
        return TensorValue(self.base, self.valence, self.comps.transpose(axes), self.frame)

    def dual_first(self, g):
        """``S^{*1}``: raise the first covariant slot with ``g``."""
        p, q = self.valence
        if q == 0:
            raise ShapeError("no covariant slot to raise")
        gi = np.linalg.inv(self._metric(g))
        # the raised slot becomes the last contravariant slot
        comps = np.moveaxis(np.tensordot(gi, self.comps, axes=([1], [p])), 0, p)
        return TensorValue(self.base, (p + 1, q - 1), comps, self.frame)

    def _metric(self, g):
        if self.frame == "synchronous":
            return np.eye(self.dim)
        return np.asarray(g, dtype=float)


def tensor_norm(T: TensorValue, g=None):
    """Pointwise norm, all slots raised or lowered with ``g``."""
    if T.frame == "synchronous" or g is None:
        if T.frame != "synchronous" and g is None:
            raise ShapeError("coordinate-frame tensors need the metric for their norm")
        g = np.eye(T.dim)
    p, _ = T.valence
    g = np.asarray(g, dtype=float)
    val = float(norm_sq(jnp.asarray(T.comps), jnp.asarray(g), p))
    return math.sqrt(max(val, 0.0))
