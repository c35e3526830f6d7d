"""Geodesic and parallel-transport flows with variational jets.

Derivatives of a flow with respect to its initial data satisfy linear
variational equations.  We integrate them in Taylor form: if ``J_k`` is the
k-th derivative tensor of the state with respect to the parameters, then
``d/dt J_k = D^k_z F(sum_j J_j z^j / j!)`` at ``z = 0``.  For ``k = 1`` this
is ``J_1' = DF J_1``; for higher ``k`` it is the same linear system plus a
polynomial inhomogeneity in the lower jets.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from scipy.integrate import solve_ivp

from ._batch import bucket_size, pad_rows
from .errors import DomainError, StiffnessError
from .tensor_core import christoffel_fn, derivative_stack

RTOL = 1e-10
ATOL = 1e-10
METHOD = "RK45"
CHUNK = 128


def taylor_eval(jets, z):
    """Evaluate ``sum_k jets[k] . z^k / k!``."""
    out = jets[0]
    for k in range(1, len(jets)):
        term = jets[k]
        for _ in range(k):
            term = term @ z
        out = out + term / math.factorial(k)
    return out


def taylor_derivatives(f, order, p):
    """``[f(0), Df(0), ...]`` for a function of a displacement ``z`` in R^p."""
    z0 = jnp.zeros(p)
    return [d(z0) for d in derivative_stack(f, order)]


# ----------------------------------------------------------------------------
# right-hand sides; every state is a flat vector


@functools.lru_cache(maxsize=None)
def geodesic_rhs(fn):
    """``(x, v) -> (v, -Gamma(x)(v, v))``."""

    def F(state, theta):
        m = state.shape[0] // 2
        x, v = state[:m], state[m:]
        G = christoffel_fn(lambda y: fn(y, theta))(x)
        return jnp.concatenate([v, -jnp.einsum("ijk,j,k->i", G, v, v)])

    return F


@functools.lru_cache(maxsize=None)
def frame_rhs(fn):
    """Geodesic plus parallel transport of an m x m frame (columns)."""

    def F(state, theta):
        m = frame_dim(state.shape[0])
        x, v = state[:m], state[m:2 * m]
        S = state[2 * m:].reshape(m, m)
        G = christoffel_fn(lambda y: fn(y, theta))(x)
        acc = -jnp.einsum("ijk,j,k->i", G, v, v)
        dS = -jnp.einsum("ijk,j,kl->il", G, v, S)
        return jnp.concatenate([v, acc, dS.ravel()])

    return F


@functools.lru_cache(maxsize=None)
def boundary_family(fn):
    """Induced metric on ``{x_m = 0}`` in the first m-1 coordinates."""

    def gbar(u, theta):
        x = jnp.concatenate([u, jnp.zeros(1)])
        return fn(x, theta)[:-1, :-1]

    return gbar


def frame_dim(state_len):
    return int(round(math.sqrt(state_len + 1))) - 1


# ----------------------------------------------------------------------------
# jet propagation


@functools.lru_cache(maxsize=None)
def _jet_rhs_kernel(F, order, n, p):
    shapes = [(n,) + (p,) * k for k in range(order + 1)]
    sizes = [int(np.prod(s)) for s in shapes]

    def rhs(flat, theta):
        jets, o = [], 0
        for s, sz in zip(shapes, sizes):
            jets.append(flat[o:o + sz].reshape(s))
            o += sz
        derivs = taylor_derivatives(lambda z: F(taylor_eval(jets, z), theta), order, p)
        return jnp.concatenate([d.ravel() for d in derivs])

    return jax.jit(jax.vmap(rhs, in_axes=(0, None))), shapes, sizes


def pack(jets):
    n = jets[0].shape[0]
    return np.concatenate([np.asarray(j).reshape(n, -1) for j in jets], axis=1)


def unpack(flat, shapes, sizes):
    out, o = [], 0
    for s, sz in zip(shapes, sizes):
        out.append(flat[:, o:o + sz].reshape((flat.shape[0],) + s))
        o += sz
    return out


def propagate(F, theta, jets0, t1, rtol=RTOL, atol=ATOL):
    """Integrate state jets ``jets0`` (batched, leading axis) from 0 to ``t1``."""
    order = len(jets0) - 1
    N, n = jets0[0].shape
    p = jets0[1].shape[-1] if order else 1
    kernel, shapes, sizes = _jet_rhs_kernel(F, order, n, p)
    flat0 = pack(jets0)
    results = []
    for start in range(0, N, CHUNK):
        part = flat0[start:start + CHUNK]
        k = part.shape[0]
        size = bucket_size(k)
        padded = pad_rows(part, size)

        def fun(_t, y, size=size):
            return np.asarray(kernel(y.reshape(size, -1), theta)).ravel()

        sol = solve_ivp(fun, (0.0, t1), padded.ravel(), method=METHOD, rtol=rtol, atol=atol)
        if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
            raise StiffnessError(f"flow integration failed: {sol.message}")
        results.append(sol.y[:, -1].reshape(size, -1)[:k])
    return unpack(np.concatenate(results, axis=0), shapes, sizes)


@functools.lru_cache(maxsize=None)
def _init_kernel(init, order, p):
    def kern(y, aux, theta):
        fs = derivative_stack(lambda yy: init(yy, aux, theta), order)
        return [f(y) for f in fs]

    return jax.jit(jax.vmap(kern, in_axes=(0, 0, None)))


def initial_jets(init, order, ys, aux, theta):
    ys = np.asarray(ys, dtype=float)
    kern = _init_kernel(init, order, ys.shape[1])
    N = ys.shape[0]
    out = None
    for start in range(0, N, CHUNK):
        part = ys[start:start + CHUNK]
        k = part.shape[0]
        size = bucket_size(k)
        sub_aux = jax.tree_util.tree_map(lambda a: pad_rows(np.asarray(a)[start:start + CHUNK], size), aux)
        res = [np.asarray(r)[:k] for r in kern(pad_rows(part, size), sub_aux, theta)]
        out = res if out is None else [np.concatenate([a, b]) for a, b in zip(out, res)]
    return out


def flow_jets(F, init, ys, aux, theta, order, t1=1.0):
    """Jets with respect to ``y`` of the time-``t1`` flow started at ``init(y)``."""
    return propagate(F, theta, initial_jets(init, order, ys, aux, theta), t1)


# ----------------------------------------------------------------------------
# public single-trajectory operations


@dataclass(frozen=True)
class FlowResult:
    x: np.ndarray
    v: np.ndarray
    t: float
    truncated: bool = False
    exit_time: float | None = None


@functools.lru_cache(maxsize=None)
def _single_rhs(fn):
    F = geodesic_rhs(fn)
    return jax.jit(F)


def geodesic_flow(metric, x0, v0, t, rtol=RTOL, atol=ATOL, check_domain=True):
    """Solve ``x'' = -Gamma(x)(x', x')`` up to time ``t``.

    If the trajectory leaves the domain box the integration stops there and
    a truncated result carrying the exit time is returned.
    """
    x0 = metric.domain.check(x0)
    v0 = np.asarray(v0, dtype=float)
    F = _single_rhs(metric.fn)
    theta = metric.theta
    lo = np.asarray(metric.domain.lower)
    hi = np.asarray(metric.domain.upper)

    def fun(_t, y):
        return np.asarray(F(y, theta))

    def leave(_t, y):
        x = y[: metric.dim]
        return float(min(np.min(x - lo), np.min(hi - x))) + 1e-12

    leave.terminal = True
    leave.direction = -1
    events = [leave] if check_domain else None
    sol = solve_ivp(fun, (0.0, float(t)), np.concatenate([x0, v0]), method=METHOD,
                    rtol=rtol, atol=atol, events=events)
    if sol.status == -1:
        raise StiffnessError(f"geodesic integration failed: {sol.message}")
    y = sol.y[:, -1]
    m = metric.dim
    if sol.status == 1:
        te = float(sol.t_events[0][0])
        return FlowResult(y[:m], y[m:], te, truncated=True, exit_time=te)
    return FlowResult(y[:m], y[m:], float(t))


def _identity_init(y, aux, theta):
    return y


def variational_jacobian(metric, x0, v0, t, order=1):
    """Derivatives of the time-``t`` geodesic flow in the initial data.

    Returns ``[state, D state, ..., D^order state]`` where the state is
    ``(x, v)`` and derivatives are taken with respect to ``(x0, v0)``.
    """
    x0 = metric.domain.check(x0)
    y = np.concatenate([x0, np.asarray(v0, float)])[None, :]
    jets = flow_jets(geodesic_rhs(metric.fn), _identity_init, y, np.zeros((1, 1)), metric.theta, order, t)
    return [j[0] for j in jets]


def speed(metric_fn, theta, x, v):
    g = np.asarray(metric_fn(jnp.asarray(x), theta))
    return float(np.sqrt(v @ g @ v))


def require_inside(metric, xs, what="point"):
    inside = metric.domain.contains(xs)
    if not np.all(inside):
        raise DomainError(f"{what} outside the domain box")


def ray_jets(F, theta, jets0, t_grid, dim, escape=50.0, rtol=RTOL, atol=ATOL):
    """Jets of one trajectory sampled on ``t_grid``.

    ``jets0`` are unbatched state jets whose first ``dim`` entries are the
    position.  Integration stops when the position leaves ``|x| <= escape``
    or the solver fails; later grid entries are NaN.
    """
    order = len(jets0) - 1
    n = jets0[0].shape[0]
    p = jets0[1].shape[-1] if order else 1
    kernel, shapes, sizes = _jet_rhs_kernel(F, order, n, p)
    flat0 = pack([np.asarray(j)[None] for j in jets0])[0]

    def fun(_t, y):
        return np.asarray(kernel(y[None], theta))[0]

    def leave(_t, y):
        return escape - float(np.max(np.abs(y[:dim])))

    leave.terminal = True
    t_grid = np.asarray(t_grid, float)
    out = np.full((len(t_grid), flat0.size), np.nan)
    try:
        sol = solve_ivp(fun, (float(t_grid[0]), float(t_grid[-1])), flat0, method=METHOD,
                        t_eval=t_grid, rtol=rtol, atol=atol, events=[leave])
        k = sol.y.shape[1]
        out[:k] = sol.y.T
        good = np.all(np.isfinite(out[:k]), axis=1)
        if not good.all():
            out[np.argmin(good):] = np.nan
    except (FloatingPointError, ValueError):
        pass
    return unpack(out, shapes, sizes)
