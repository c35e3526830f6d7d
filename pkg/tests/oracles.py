"""Closed-form reference values used by the tests.

Frozen numbers were evaluated once with the formulas next to them and are
kept literal so a drift in either the formula or the code shows up.
"""

import math

import numpy as np

# sin(r)^2 / r^2 and sinh(r)^2 / r^2: angular eigenvalue of the metric in
# normal coordinates of curvature +1 / -1 at distance r
SPHERE_ENVELOPE = {0.25: 0.9793395048770184, 0.5: 0.9193953882637206, math.pi / 4: 0.8105694691387021}
HYPERBOLIC_ENVELOPE = {0.25: 1.0210077216510463, 0.5: 1.0861612696304876, math.pi / 4: 1.223293998281415}

# geodesic disk areas at r = 0.3: 2 pi (1 - cos r), 2 pi (cosh r - 1)
CAP_AREA_03 = 0.2806291152930482
HYPERBOLIC_AREA_03 = 0.2848702858238102
FLAT_AREA_01 = 0.031415926535897934


def sphere_envelope(r):
    return math.sin(r) ** 2 / r ** 2


def hyperbolic_envelope(r):
    return math.sinh(r) ** 2 / r ** 2


def constant_curvature_riemann(g, K):
    """``R_ijkl = K (g_ik g_jl - g_il g_jk)``."""
    return K * (np.einsum("ik,jl->ijkl", g, g) - np.einsum("il,jk->ijkl", g, g))


def curvature_norm_2d(K):
    # |R|^2 = 4 K^2 for a surface of constant curvature K
    return 2.0 * abs(K)


def warped_second_fundamental_form(c0, c1, kappa, u):
    """``l`` of ``{t = 0}`` in ``dt^2 + phi(t)^2 h`` with ``phi = c0 + c1 t + ...``,
    inward normal ``d_t``: ``l_ab = -phi phi' h_ab`` at ``t = 0``."""
    u = np.asarray(u, float)
    h = 1.0 / (1.0 + 0.25 * kappa * (u @ u)) ** 2
    return -c0 * c1 * h * np.eye(u.size)


def warped_orthonormal_l(c0, c1):
    """``l`` in a ``g-bar`` orthonormal frame: ``-(c1 / c0) delta``."""
    return -c1 / c0
