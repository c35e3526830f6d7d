"""Synchronous orthonormal frames over normal charts and their identity residuals.

Conventions, with ``s_i`` the transported frame and ``d_j`` the chart basis:

* ``a[i, j] = g(s_i, d_j)``, so ``theta^i = sum_j a[i, j] dx_j``; ``b = a^{-1}``.
* ``Gamma[i, j, k] = g(s_i, nabla_{d_k} s_j)``.
* ``R[i, j, k, l] = 1/2 g(s_i, Rm(d_l, d_k) s_j)``, the coefficient of
  ``dx_k ^ dx_l`` in the curvature 2-form summed over all ordered pairs.
* ``K[i, j, p, q] = 1/2 g(s_i, Rm(s_q, s_p) s_j)``, the same in the frame.

With these, the radial identities hold in the form used by the Step-2 style
checks, and along collar normal lines ``d_m Gamma^i_jk = NU_GAMMA_FACTOR R^i_jmk``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from ._batch import map_batched, map_tree
from .boundary_geom import sff_fn
from .charts import COLLAR, GAUSSIAN, sample_chart
from .flows import taylor_derivatives, taylor_eval
from .tensor_core import christoffel_fn, riemann_fn

NU_GAMMA_FACTOR = -2.0
GL_NODES = 16
FD_STEP = 1e-3


def _quantities(fn, theta, xj, Sj, m):
    """Functions of the chart displacement ``z`` built from the jets."""

    def X(z):
        return taylor_eval(xj, z)

    def J(z):
        return jax.jacfwd(X)(z)

    def S(z):
        return taylor_eval(Sj, z).reshape(m, m) if Sj[0].ndim == 1 else taylor_eval(Sj, z)

    gfn = lambda y: fn(y, theta)  # noqa: E731

    def a(z):
        return S(z).T @ gfn(X(z)) @ J(z)

    def b(z):
        return jnp.linalg.inv(a(z))

    def gamma(z):
        Sz, Jz, x = S(z), J(z), X(z)
        dS = jax.jacfwd(S)(z)  # [c, j, k] = d_k S^c_j
        G = christoffel_fn(gfn)(x)
        cov = dS + jnp.einsum("cde,dk,ej->cjk", G, Jz, Sz)
        return jnp.einsum("ci,cd,djk->ijk", Sz, gfn(x), cov)

    def riem(z):
        Sz, Jz = S(z), J(z)
        Rb = riemann_fn(gfn)(X(z))
        return 0.5 * jnp.einsum("abcd,al,bk,ci,dj->ijkl", Rb, Jz, Jz, Sz, Sz)

    def kfr(z):
        Sz = S(z)
        Rb = riemann_fn(gfn)(X(z))
        return 0.5 * jnp.einsum("abcd,aq,bp,ci,dj->ijpq", Rb, Sz, Sz, Sz, Sz)

    def gpull(z):
        Jz = J(z)
        return Jz.T @ gfn(X(z)) @ Jz

    def orth(z):
        Sz = S(z)
        return Sz.T @ gfn(X(z)) @ Sz

    return dict(a=a, b=b, gamma=gamma, R=riem, K=kfr, g=gpull, orth=orth)


QUANTITIES = ("a", "gamma", "R", "K")


@functools.lru_cache(maxsize=None)
def _frame_kernel(fn, orders):
    def kern(xj, Sj, theta):
        m = xj[0].shape[0]
        q = _quantities(fn, theta, xj, Sj, m)
        out = {name: taylor_derivatives(q[name], k, m) for name, k in zip(QUANTITIES, orders)}
        z0 = jnp.zeros(m)
        out["b"] = q["b"](z0)
        out["g"] = q["g"](z0)
        out["orth"] = q["orth"](z0)
        # pullback Christoffels need second derivatives of the chart
        out["gamma_pull"] = christoffel_fn(q["g"])(z0) if len(xj) > 2 else None
        return out

    return jax.jit(jax.vmap(kern, in_axes=(0, 0, None)))


@dataclass(frozen=True)
class SynchronousFrame:
    """Frame data at chart samples ``ys``; jets are lists ``[f, Df, ...]``
    with a leading sample axis."""

    chart: object
    ys: np.ndarray
    s: np.ndarray
    a: list
    b: np.ndarray
    gamma: list
    R: list
    K: list
    g: np.ndarray
    gamma_pull: np.ndarray
    orth: np.ndarray

    @property
    def order(self):
        return len(self.a) - 1

    def orthonormality_residual(self):
        return float(np.max(np.abs(self.orth - np.eye(self.chart.dim))))

    def ab_residual(self):
        return float(np.max(np.abs(self.a[0] @ self.b - np.eye(self.chart.dim))))

    def metric_residual(self):
        """``g_ij = sum_alpha a^alpha_i a^alpha_j``."""
        A = self.a[0]
        return float(np.max(np.abs(self.g - np.einsum("nai,naj->nij", A, A))))


def synchronous_frame(chart, ys, k=1, orders=None):
    """Frame quantities and their coordinate jets up to order ``k`` at ``ys``.

    ``orders`` optionally gives separate jet orders for ``a, Gamma, R, K``
    (curvature jets are the expensive ones).
    """
    ys = np.atleast_2d(np.asarray(ys, float))
    orders = tuple(orders) if orders is not None else (k,) * 4
    if len(orders) != 4:
        raise ValueError("orders gives one jet order per quantity: a, Gamma, R, K")
    cj = chart.jets(ys, max(orders) + 1, with_frame=True)
    kern = _frame_kernel(chart.metric.fn, orders)
    out = map_tree(lambda t: kern(t[0], t[1], chart.metric.theta), (list(cj.x), list(cj.S)))
    out = jax.tree_util.tree_map(np.asarray, out)
    return SynchronousFrame(
        chart=chart,
        ys=ys,
        s=cj.S[0],
        a=out["a"],
        b=out["b"],
        gamma=out["gamma"],
        R=out["R"],
        K=out["K"],
        g=out["g"],
        gamma_pull=out["gamma_pull"],
        orth=out["orth"],
    )


# ----------------------------------------------------------------------------
# Step-2 residuals (Gaussian charts)


@dataclass(frozen=True)
class ResidualReport:
    kind: str
    n_samples: int
    residuals: dict
    extras: dict

    @property
    def max_residual(self):
        return max(self.residuals.values()) if self.residuals else 0.0

    def as_dict(self):
        return {"kind": self.kind, "n_samples": self.n_samples, "residuals": dict(self.residuals), **self.extras}


def _base_residuals(fr):
    return {
        "orthonormality": fr.orthonormality_residual(),
        "ab_inverse": fr.ab_residual(),
        "metric_from_a": fr.metric_residual(),
    }


def _gl_nodes(n=GL_NODES):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def step2_residuals(chart, ys=None, n=50, seed=0):
    """Residuals of the radial identities in a Gaussian chart.

    gamma_ode       ``R Gamma + Gamma - 2 sum_l y_l R^i_jkl``
    gij             ``(R^2 + R) a^i_l + 2 sum R^i_jkl y_j y_k``
    bgamma          ``Gamma - int_0^1 2 t sum_l y_l R^i_jkl(t y) dt`` (Gauss-Legendre)
    tgamma_gamma    pullback Christoffels vs ``d_k a^i_j + sum a^p_j Gamma^i_pk``
    radial_gauge    ``sum_k y_k Gamma^i_jk``
    """
    if chart.kind != GAUSSIAN:
        raise ValueError("step2_residuals needs a Gaussian chart")
    if ys is None:
        ys = sample_chart(chart, n, seed)
    ys = np.atleast_2d(ys)
    fr = synchronous_frame(chart, ys, orders=(2, 1, 0, 0))
    res = _base_residuals(fr)
    G, dG = fr.gamma[0], fr.gamma[1]
    R = fr.R[0]
    a, da, dda = fr.a
    rg = np.einsum("nijkl,nl->nijk", dG, ys) + G - 2 * np.einsum("nl,nijkl->nijk", ys, R)
    res["gamma_ode"] = float(np.max(np.abs(rg)))
    lhs = np.einsum("nilpq,np,nq->nil", dda, ys, ys) + 2 * np.einsum("nilp,np->nil", da, ys)
    rhs = -2 * np.einsum("nijkl,nj,nk->nil", R, ys, ys)
    res["gij"] = float(np.max(np.abs(lhs - rhs)))
    tg = np.einsum("nic,ncjk->nijk", a, fr.gamma_pull)
    tg_formula = np.einsum("nijk->nijk", da) + np.einsum("npj,nipk->nijk", a, G)
    res["tgamma_gamma"] = float(np.max(np.abs(tg - tg_formula)))
    res["radial_gauge"] = float(np.max(np.abs(np.einsum("nijk,nk->nij", G, ys))))
    tau, w = _gl_nodes()
    pts = (tau[None, :, None] * ys[:, None, :]).reshape(-1, chart.dim)
    Rq = synchronous_frame(chart, pts, orders=(0, 0, 0, 0)).R[0].reshape((len(ys), len(tau)) + R.shape[1:])
    integral = np.einsum("q,nq,nl,nqijkl->nijk", w, 2 * tau[None, :].repeat(len(ys), 0), ys, Rq)
    res["bgamma"] = float(np.max(np.abs(G - integral)))
    return ResidualReport(GAUSSIAN, len(ys), res, {})


# ----------------------------------------------------------------------------
# Step-4 residuals (collar charts)


def _shift_t(ys, dt):
    out = ys.copy()
    out[:, -1] += dt
    return out


def _richardson_first(f, ys, h):
    d1 = (f(_shift_t(ys, h)) - f(_shift_t(ys, -h))) / (2 * h)
    d2 = (f(_shift_t(ys, h / 2)) - f(_shift_t(ys, -h / 2))) / h
    return (4 * d2 - d1) / 3


def boundary_l(chart, vs):
    """``l_ij = l(d_i, s_j)`` at the boundary points ``(v, 0)`` of a collar chart."""
    vs = np.atleast_2d(vs)
    ys = np.column_stack([vs, np.zeros(len(vs))])
    fr = synchronous_frame(chart, ys, orders=(0, 0, 0, 0))
    cj = chart.jets(ys, 1, with_frame=True)
    m = chart.dim
    lk = jax.jit(jax.vmap(sff_fn(chart.metric.fn), in_axes=(0, None)))
    l = np.asarray(map_batched(lk, cj.points[:, :-1], chart.metric.theta))
    J = cj.jacobian[:, :-1, :]
    S = cj.S[0][:, :-1, :]
    return np.einsum("nai,nab,nbj->nij", J, l, S)[:, : m - 1, : m - 1], fr


def step4_residuals(chart, ys=None, n=30, seed=0, h=FD_STEP):
    """Residuals of the collar identities.

    ith            ``Gamma^i_jm = 0``
    nu_gamma       ``d_m Gamma^i_jk - c R^i_jmk`` with ``c = NU_GAMMA_FACTOR``;
                   ``d_m`` by Richardson-extrapolated differences along the normal lines
    nu_a           ``d_m^2 a^i_j + 2 sum K^i_mkl a^k_m a^l_j``
    theta1         ``d_m a^i_j - Gamma^i_mj``
    init_gamma_m   ``Gamma^m_jk - l_kj`` at ``t = 0``
    init_gamma_i   ``Gamma^i_mj + l_ji`` at ``t = 0``
    init_a         ``a^i_m - delta_im``
    *_tangential   the same ODE identities differentiated once along the boundary (jets)
    """
    if chart.kind != COLLAR:
        raise ValueError("step4_residuals needs a collar chart")
    m = chart.dim
    if ys is None:
        ys = sample_chart(chart, n, seed)
        ys[:, -1] = np.clip(ys[:, -1], 2 * h, None)
    ys = np.atleast_2d(np.asarray(ys, float))
    if np.any(ys[:, -1] < h):
        raise ValueError("collar samples need t >= h for the normal differences")
    fr = synchronous_frame(chart, ys, orders=(2, 2, 1, 0))
    res = _base_residuals(fr)
    G, dG = fr.gamma[0], fr.gamma[1]
    R, dR = fr.R[0], fr.R[1]
    a = fr.a[0]
    res["ith"] = float(np.max(np.abs(G[:, :, :, -1])))

    def gam(zs):
        return synchronous_frame(chart, zs, orders=(0, 0, 0, 0)).gamma[0]

    def da_normal(zs):
        return synchronous_frame(chart, zs, orders=(1, 0, 0, 0)).a[1][..., -1]

    dmG = _richardson_first(gam, ys, h)
    Rjmk = R[:, :, :, -1, :]
    res["nu_gamma"] = float(np.max(np.abs(dmG - NU_GAMMA_FACTOR * Rjmk)))
    den = float(np.sum(Rjmk * Rjmk))
    fitted = float(np.sum(dmG * Rjmk) / den) if den > 1e-24 else None
    res["nu_gamma_jets"] = float(np.max(np.abs(dG[..., -1] - NU_GAMMA_FACTOR * Rjmk)))
    # d_m^2 a as the normal difference of the first-derivative jets; second
    # differences of a itself would amplify the integrator tolerance by 1/h^2
    d2a = _richardson_first(da_normal, ys, h)
    Kmkl = fr.K[0][:, :, -1, :, :]
    rhs = -2 * np.einsum("nikl,nkm,nlj->nij", Kmkl, a[:, :, -1:], a)
    res["nu_a"] = float(np.max(np.abs(d2a - rhs)))
    res["nu_a_jets"] = float(np.max(np.abs(fr.a[2][..., -1, -1] - rhs)))
    res["theta1"] = float(np.max(np.abs(fr.a[1][..., -1] - G[:, :, -1, :])))
    # tangential derivatives (alpha_m = 0) of the ODE identities, from the jets
    t = slice(0, m - 1)
    res["ith_tangential"] = float(np.max(np.abs(dG[:, :, :, -1, t])))
    res["nu_gamma_tangential"] = float(
        np.max(np.abs(fr.gamma[2][..., -1, t] - NU_GAMMA_FACTOR * dR[:, :, :, -1, :, t]))
    )
    # boundary initial values
    l, fr0 = boundary_l(chart, ys[:, :-1])
    G0 = fr0.gamma[0]
    res["init_gamma_m"] = float(np.max(np.abs(G0[:, -1, t, t] - np.swapaxes(l, 1, 2))))
    res["init_gamma_i"] = float(np.max(np.abs(G0[:, t, -1, t] + np.swapaxes(l, 1, 2))))
    res["init_a"] = float(np.max(np.abs(fr0.a[0][:, :, -1] - np.eye(m)[None, :, -1])))
    extras = {"nu_gamma_factor": NU_GAMMA_FACTOR, "nu_gamma_factor_fitted": fitted, "fd_step": h}
    return ResidualReport(COLLAR, len(ys), res, extras)
