"""Geometry of the boundary ``{x_m = 0}``.

The second fundamental form is ``l(X, Y) = g(nabla_X Y, nu)`` with ``nu`` the
inward unit normal, so the induced connection is
``nabla-bar_X Y = nabla_X Y - l(X, Y) nu`` and the boundary of the unit ball
has ``l = +g-bar``.  With this sign ``g(nabla_X nu, Y) = -l(X, Y)``; the
pairing is measured rather than assumed (:func:`nabla_nu`).

Boundary tensors use the first m-1 coordinates as tangent basis.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from ._batch import map_batched
from .errors import CapabilityError, DegeneracyError, DomainError, ShapeError
from .flows import boundary_family
from .tensor_core import christoffel_fn, curvature_stack_fn, nabla_fn, norm_sq


@dataclass(frozen=True)
class BoundaryPoint:
    coords: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.coords, dtype=float)
        if x.ndim != 1 or x[-1] != 0.0:
            raise DomainError("boundary points have x_m = 0 exactly")
        object.__setattr__(self, "coords", x)

    @property
    def u(self):
        return self.coords[:-1]


def boundary_point(metric, x):
    if not metric.domain.has_boundary:
        raise DomainError("domain has no boundary")
    bp = BoundaryPoint(np.asarray(x, dtype=float))
    metric.domain.check(bp.coords)
    return bp


def _check_spd(g):
    g = np.asarray(g)
    if not np.all(np.isfinite(g)) or np.linalg.eigvalsh(g).min() <= 0:
        raise DegeneracyError("metric is not positive definite at the boundary point")


# ----------------------------------------------------------------------------
# JAX field functions of the boundary coordinate u


def normal_fn(fn):
    def nu(u, theta):
        x = jnp.concatenate([u, jnp.zeros(1)])
        gi = jnp.linalg.inv(fn(x, theta))
        return gi[:, -1] / jnp.sqrt(gi[-1, -1])

    return nu


def sff_fn(fn):
    """``u -> l_ab(u)`` in boundary coordinates."""

    def l(u, theta):
        x = jnp.concatenate([u, jnp.zeros(1)])
        gfn = lambda y: fn(y, theta)  # noqa: E731
        G = christoffel_fn(gfn)(x)
        gi = jnp.linalg.inv(gfn(x))
        return G[-1, :-1, :-1] / jnp.sqrt(gi[-1, -1])

    return l


def _sff_stack(fn, theta, k):
    gbar = boundary_family(fn)
    gb = lambda u: gbar(u, theta)  # noqa: E731
    fns = [lambda u: sff_fn(fn)(u, theta)]
    for _ in range(k):
        fns.append(nabla_fn(fns[-1], gb, 0))
    return gb, fns


@functools.lru_cache(maxsize=None)
def _sff_kernel(fn, k):
    def kern(u, theta):
        gb, fns = _sff_stack(fn, theta, k)
        g = gb(u)
        stack = [f(u) for f in fns]
        norms = jnp.stack([jnp.sqrt(jnp.abs(norm_sq(t, g))) for t in stack])
        return g, stack, norms

    return jax.jit(kern)


@functools.lru_cache(maxsize=None)
def _boundary_norm_batch(fn, k):
    """Per point: ``|nabla-bar^j l|`` and ``|nabla-bar^j R-bar|`` for ``j <= k``."""

    def kern(u, theta):
        gb, lfns = _sff_stack(fn, theta, k)
        g = gb(u)
        ln = jnp.stack([jnp.sqrt(jnp.abs(norm_sq(f(u), g))) for f in lfns])
        rn = jnp.stack([jnp.sqrt(jnp.abs(norm_sq(f(u), g))) for f in curvature_stack_fn(gb, k)])
        return ln, rn

    return jax.jit(jax.vmap(kern, in_axes=(0, None)))


# ----------------------------------------------------------------------------


def inward_normal(metric, x):
    """Unit inward normal ``nu`` at a boundary point (background components)."""
    bp = boundary_point(metric, x)
    fn, theta = metric.local(bp.coords)
    _check_spd(fn(jnp.asarray(bp.coords), theta))
    return np.asarray(jax.jit(normal_fn(fn))(jnp.asarray(bp.u), theta))


@dataclass(frozen=True)
class SecondFundamentalForm:
    base: BoundaryPoint
    gbar: np.ndarray
    l: np.ndarray
    nabla_l: list
    norms: np.ndarray

    def symmetry_residual(self):
        return float(np.max(np.abs(self.l - self.l.T)))

    def shape_operator(self):
        """``l`` with its first slot raised by the induced metric."""
        return np.linalg.solve(self.gbar, self.l)


def _local(metric, bp, order):
    if order > metric.k_max:
        raise CapabilityError(f"needs metric jets of order {order} > K_max={metric.k_max}")
    return metric.local(bp.coords)


def second_fundamental_form(metric, x, k=0):
    """``l`` and its intrinsic covariant derivatives up to order ``k``."""
    bp = boundary_point(metric, x)
    fn, theta = _local(metric, bp, k + 2)
    _check_spd(fn(jnp.asarray(bp.coords), theta))
    g, stack, norms = _sff_kernel(fn, k)(jnp.asarray(bp.u), theta)
    stack = [np.asarray(s) for s in stack]
    return SecondFundamentalForm(bp, np.asarray(g), stack[0], stack, np.asarray(norms))


def boundary_norms(metric, xs, k=0):
    """Arrays ``(N, k+1)`` of ``|nabla-bar^j l|`` and ``|nabla-bar^j R-bar|``."""
    xs = np.atleast_2d(np.asarray(xs, float))
    if np.any(xs[:, -1] != 0.0):
        raise DomainError("boundary points have x_m = 0 exactly")
    if k + 2 > metric.k_max:
        raise CapabilityError(f"boundary curvature of order {k} needs jets of order {k + 2}")
    return map_batched(_boundary_norm_batch(metric.fn, k), xs[:, :-1], metric.theta)


# ----------------------------------------------------------------------------
# restriction calculus


def _check_valence(tfn, x, q):
    out = jax.eval_shape(tfn, jnp.asarray(x))
    m = x.shape[0]
    if out.shape != (m,) * q:
        raise ShapeError(f"tensor field returns shape {out.shape}, expected covariant valence {q}")


def restrict_and_correct(metric, tfn, x, q):
    """Intrinsic derivative of the restriction of a (0, q) field, computed from
    the ambient derivative plus normal corrections:

    ``nabla-bar T(v_1..v_q, X) = nabla T(v_1..v_q, X) + sum_i T(.., nu, ..) l(v_i, X)``
    with ``nu`` in slot ``i``.  ``tfn`` maps background coordinates to the
    component array; the result has shape ``(m-1,)*(q+1)``.
    """
    bp = boundary_point(metric, x)
    fn, theta = metric.local(bp.coords)
    xj = jnp.asarray(bp.coords)
    _check_valence(tfn, xj, q)
    gfn = lambda y: fn(y, theta)  # noqa: E731
    nab = np.asarray(jax.jit(nabla_fn(tfn, gfn, 0))(xj))
    T = np.asarray(tfn(xj))
    nu = np.asarray(normal_fn(fn)(jnp.asarray(bp.u), theta))
    l = np.asarray(sff_fn(fn)(jnp.asarray(bp.u), theta))
    t = slice(0, metric.dim - 1)
    out = nab[(t,) * (q + 1)].copy()
    for i in range(q):
        Tnu = np.tensordot(np.moveaxis(T, i, -1), nu, axes=([-1], [0]))  # remaining slots in order
        Tnu = Tnu[(t,) * (q - 1)]
        corr = np.multiply.outer(Tnu, l)  # (..., v_i, X)
        out += np.moveaxis(corr, q - 1, i)
    return out


def intrinsic_derivative(metric, tfn, x, q, method="fd", h=1e-4):
    """Direct ``nabla-bar`` of the restricted field, using the induced metric.

    ``method="fd"`` differentiates the restriction with central differences
    along the boundary; ``"ad"`` uses forward-mode derivatives.
    """
    bp = boundary_point(metric, x)
    fn, theta = metric.local(bp.coords)
    _check_valence(tfn, jnp.asarray(bp.coords), q)
    n = metric.dim - 1
    t = slice(0, n)

    def restricted(u):
        return tfn(jnp.concatenate([u, jnp.zeros(1)]))[(t,) * q]

    gb = lambda u: boundary_family(fn)(u, theta)  # noqa: E731
    u = jnp.asarray(bp.u)
    Gb = np.asarray(christoffel_fn(gb)(u))
    T = np.asarray(restricted(u))
    if method == "ad":
        dT = np.asarray(jax.jacfwd(restricted)(u))
    else:
        cols = []
        for a in range(n):
            e = np.zeros(n)
            e[a] = h
            cols.append((np.asarray(restricted(u + e)) - np.asarray(restricted(u - e))) / (2 * h))
        dT = np.stack(cols, axis=-1)
    out = dT.copy()
    for s in range(q):
        term = np.tensordot(np.moveaxis(T, s, -1), Gb, axes=([-1], [0]))  # (..., c, a)
        out -= np.moveaxis(term, -1, s)
    return out


@dataclass(frozen=True)
class NablaNu:
    """``nabla_{d_a} nu = A[b, a] d_b``; ``pairing[a, b] = g-bar(nabla_{d_a} nu, d_b)``."""

    A: np.ndarray
    pairing: np.ndarray
    l: np.ndarray
    sign: float
    residual: float
    normal_component: float


def nabla_nu(metric, x):
    """Derivative of the inward normal along the boundary, with the measured
    sign ``s`` in ``g-bar(nabla_X nu, Y) = s l(X, Y)``."""
    bp = boundary_point(metric, x)
    fn, theta = metric.local(bp.coords)
    u = jnp.asarray(bp.u)
    xj = jnp.asarray(bp.coords)
    nu = normal_fn(fn)
    dnu = np.asarray(jax.jacfwd(lambda w: nu(w, theta))(u))  # (m, m-1)
    G = np.asarray(christoffel_fn(lambda y: fn(y, theta))(xj))
    nuv = np.asarray(nu(u, theta))
    n = metric.dim - 1
    full = dnu + np.einsum("ijk,jb,k->ib", G[:, :, :], np.eye(metric.dim)[:, :n], nuv)
    g = np.asarray(fn(xj, theta))
    pairing = np.einsum("ia,ij,jb->ab", full, g, np.eye(metric.dim)[:, :n])
    l = np.asarray(sff_fn(fn)(u, theta))
    ln = np.sum(l * l)
    sign = float(np.sign(np.sum(pairing * l))) if ln > 1e-24 else -1.0
    residual = float(np.max(np.abs(pairing - sign * l)))
    return NablaNu(full[:n], pairing, l, sign, residual, float(np.max(np.abs(full[n:]))))


# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryCurvatureReport:
    base: BoundaryPoint
    Rbar: np.ndarray
    gauss_residual: float
    rbar_norms: np.ndarray
    ambient_norms: np.ndarray
    l_norms: np.ndarray
    sectional: float | None

    def as_dict(self):
        return {
            "point": self.base.coords.tolist(),
            "gauss_residual": self.gauss_residual,
            "boundary_curvature_norms": self.rbar_norms.tolist(),
            "ambient_curvature_norms": self.ambient_norms.tolist(),
            "second_fundamental_form_norms": self.l_norms.tolist(),
            "sectional": self.sectional,
        }


@functools.lru_cache(maxsize=None)
def _bcurv_kernel(fn, k):
    def kern(u, theta):
        gb = lambda w: boundary_family(fn)(w, theta)  # noqa: E731
        g = gb(u)
        stack = [f(u) for f in curvature_stack_fn(gb, k)]
        norms = jnp.stack([jnp.sqrt(jnp.abs(norm_sq(t, g))) for t in stack])
        x = jnp.concatenate([u, jnp.zeros(1)])
        gfn = lambda y: fn(y, theta)  # noqa: E731
        amb = [f(x) for f in curvature_stack_fn(gfn, k)]
        anorms = jnp.stack([jnp.sqrt(jnp.abs(norm_sq(t, gfn(x)))) for t in amb])
        return g, stack[0], norms, amb[0], anorms

    return jax.jit(kern)


def boundary_curvature_report(metric, x, k=0):
    """Intrinsic curvature of the boundary with the Gauss-equation cross-check
    ``R-bar_abcd = R_abcd + l_ac l_bd - l_ad l_bc``."""
    bp = boundary_point(metric, x)
    fn, theta = _local(metric, bp, k + 2)
    g, Rb, norms, R, anorms = _bcurv_kernel(fn, k)(jnp.asarray(bp.u), theta)
    sff = second_fundamental_form(metric, bp.coords, max(k - 1, 0))
    Rb = np.asarray(Rb)
    g = np.asarray(g)
    n = metric.dim - 1
    l = sff.l
    t = slice(0, n)
    gauss = np.asarray(R)[t, t, t, t] + np.einsum("ac,bd->abcd", l, l) - np.einsum("ad,bc->abcd", l, l)
    sec = None
    if n >= 2:
        den = g[0, 0] * g[1, 1] - g[0, 1] ** 2
        sec = float(Rb[0, 1, 0, 1] / den)
    return BoundaryCurvatureReport(
        bp, Rb, float(np.max(np.abs(Rb - gauss))), np.asarray(norms), np.asarray(anorms), sff.norms, sec
    )
