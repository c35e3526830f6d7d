"""Built-in metric families on half-space coordinate boxes.

Every family is a JAX function ``fn(x, theta)``; ``theta`` is a flat float
array so members of a family share compiled kernels.

flat_half_space
    ``g = delta``.
hyperbolic_slab
    ``g = scale^2 delta / y^2`` with height ``y = x_m + offset``.  With the
    default offset 1 the boundary is the horocycle ``y = 1``.
spherical_cap
    Round sphere of radius ``radius`` in stereographic coordinates taken from
    a point of the cap's boundary circle, shifted so the cap of angular radius
    ``cap_angle`` is exactly ``{x_m >= 0}``.
warped_product
    ``dt^2 + phi(t)^2 h`` with ``t = x_m``, ``phi = c0 + c1 t + c2 t^2`` and
    ``h`` the conformally flat metric of constant curvature ``fiber_curvature``.
    ``c0=1, c1=-1, fiber_curvature=1, dim=3`` is flat space in polar form
    around the unit ball, whose boundary sphere is ``{x_m = 0}``.
perturbed
    ``(I + eps H)^T g_base (I + eps H)`` with ``H`` a seeded, bump-modulated
    trigonometric field of Frobenius norm at most 1.
"""

from __future__ import annotations

import functools
import math

import jax.numpy as jnp
import numpy as np

from .errors import DegeneracyError
from .tensor_core import DomainSpec, MetricField

N_MODES = 3


def _flat(x, theta):
    return jnp.eye(x.shape[0])


def _hyperbolic(x, theta):
    scale, offset = theta[0], theta[1]
    y = x[-1] + offset
    return (scale / y) ** 2 * jnp.eye(x.shape[0])


def _cap(x, theta):
    radius, cot_angle = theta[0], theta[1]
    w = x.at[-1].add(cot_angle)
    return (2.0 * radius / (1.0 + w @ w)) ** 2 * jnp.eye(x.shape[0])


def _warped(x, theta):
    c0, c1, c2, kappa = theta[0], theta[1], theta[2], theta[3]
    m = x.shape[0]
    t = x[-1]
    u = x[:-1]
    phi = c0 + c1 * t + c2 * t * t
    h = 1.0 / (1.0 + 0.25 * kappa * (u @ u)) ** 2
    diag = jnp.concatenate([jnp.full(m - 1, phi * phi * h), jnp.ones(1)])
    return jnp.diag(diag)


FAMILIES = {
    "flat_half_space": _flat,
    "hyperbolic_slab": _hyperbolic,
    "spherical_cap": _cap,
    "warped_product": _warped,
}

DEFAULTS = {
    "flat_half_space": {},
    "hyperbolic_slab": {"scale": 1.0, "offset": 1.0},
    "spherical_cap": {"radius": 1.0, "cap_angle": math.pi / 3},
    "warped_product": {"c0": 1.0, "c1": 0.3, "c2": 1.0, "fiber_curvature": 0.0},
    "perturbed": {"base": "hyperbolic_slab", "amplitude": 0.1, "seed": 0, "width": 0.5},
}

DEFAULT_BOXES = {
    "flat_half_space": (-1.0, 1.0, 1.0),
    "hyperbolic_slab": (-1.0, 1.0, 1.5),
    "spherical_cap": (-1.0, 1.0, 1.6),
    "warped_product": (-1.0, 1.0, 1.0),
}


def _theta(name, params):
    if name == "flat_half_space":
        return np.zeros(0)
    if name == "hyperbolic_slab":
        if params["scale"] <= 0 or params["offset"] <= 0:
            raise ValueError("hyperbolic_slab needs scale > 0 and offset > 0")
        return np.array([params["scale"], params["offset"]], float)
    if name == "spherical_cap":
        angle = params["cap_angle"]
        if not 0 < angle < math.pi / 2 or params["radius"] <= 0:
            raise ValueError("spherical_cap needs radius > 0 and 0 < cap_angle < pi/2")
        return np.array([params["radius"], 1.0 / math.tan(angle)], float)
    if name == "warped_product":
        if params["c0"] <= 0:
            raise ValueError("warped_product needs phi(0) = c0 > 0")
        return np.array([params["c0"], params["c1"], params["c2"], params["fiber_curvature"]], float)
    raise ValueError(f"unknown metric family {name!r}")


def cap_center(dim, cap_angle=math.pi / 3):
    """Coordinates of the centre of the spherical cap."""
    x = np.zeros(dim)
    x[-1] = 1.0 / math.tan(cap_angle / 2) - 1.0 / math.tan(cap_angle)
    return x


@functools.lru_cache(maxsize=None)
def perturbed_family(base_fn, n_base):
    """Perturbation of ``base_fn``; theta = base theta followed by the field."""

    def fn(x, theta):
        m = x.shape[0]
        base = base_fn(x, theta[:n_base])
        t = theta[n_base:]
        eps = t[0]
        centre = t[1:1 + m]
        width = t[1 + m]
        o = 2 + m
        amps = t[o:o + N_MODES * m * m].reshape(N_MODES, m, m)
        o += N_MODES * m * m
        waves = t[o:o + N_MODES * m].reshape(N_MODES, m)
        o += N_MODES * m
        phases = t[o:o + N_MODES]
        d = x - centre
        bump = jnp.exp(-(d @ d) / width**2)
        modes = jnp.cos(waves @ x + phases)
        H = bump * jnp.einsum("q,qij->ij", modes, amps) / (N_MODES * m)
        P = jnp.eye(m) + eps * H
        return P.T @ base @ P

    return fn


def perturbation_theta(dim, amplitude, seed, width, centre):
    rng = np.random.default_rng(seed)
    amps = rng.uniform(-1.0, 1.0, (N_MODES, dim, dim))
    waves = rng.normal(0.0, 2.0, (N_MODES, dim))
    phases = rng.uniform(0.0, 2 * math.pi, N_MODES)
    return np.concatenate([[amplitude], centre, [width], amps.ravel(), waves.ravel(), phases])


def default_box(name, dim):
    lo, hi, height = DEFAULT_BOXES[name]
    lower = [lo] * (dim - 1) + [0.0]
    upper = [hi] * (dim - 1) + [height]
    return lower, upper


def build_metric(name, dim=2, params=None, box=None, k_max=3, jet_source="analytic"):
    """Instantiate a built-in metric family as a :class:`MetricField`."""
    params = dict(params or {})
    if name == "perturbed":
        merged = dict(DEFAULTS["perturbed"])
        merged.update(params)
        base_name = merged["base"]
        if base_name not in FAMILIES:
            raise ValueError(f"unknown base family {base_name!r}")
        amplitude = float(merged["amplitude"])
        if not 0 <= amplitude < 0.5:
            raise ValueError("perturbation amplitude must lie in [0, 0.5)")
        base_params = dict(DEFAULTS[base_name])
        base_params.update(merged.get("base_params", {}) or {})
        base_theta = _theta(base_name, base_params)
        lower, upper = box or default_box(base_name, dim)
        centre = 0.5 * (np.asarray(lower) + np.asarray(upper))
        theta = np.concatenate([
            base_theta,
            perturbation_theta(dim, amplitude, int(merged["seed"]), float(merged["width"]), centre),
        ])
        fn = perturbed_family(FAMILIES[base_name], len(base_theta))
        label = f"perturbed[{base_name},seed={int(merged['seed'])}]"
    else:
        if name not in FAMILIES:
            raise ValueError(f"unknown metric family {name!r}")
        merged = dict(DEFAULTS[name])
        unknown = set(params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
        merged.update(params)
        theta = _theta(name, merged)
        fn = FAMILIES[name]
        lower, upper = box or default_box(name, dim)
        label = name
    domain = DomainSpec.half_space(lower, upper)
    if domain.dim != dim:
        raise ValueError("box dimension does not match dim")
    metric = MetricField(domain=domain, fn=fn, theta=theta, k_max=k_max, name=label, jet_source=jet_source)
    check_positive(metric)
    return metric


def check_positive(metric, n=7):
    """Reject metrics that fail to be SPD on a grid over the box."""
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(metric.domain.lower, metric.domain.upper)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, metric.dim)
    gs = metric.eval_many(pts)
    lam = np.linalg.eigvalsh(gs)
    if not np.all(np.isfinite(lam)) or lam.min() <= 0:
        raise DegeneracyError(f"{metric.name}: metric not positive definite on the box")
    if np.max(np.abs(gs - gs.transpose(0, 2, 1))) > 1e-12:
        raise DegeneracyError(f"{metric.name}: metric not symmetric")


def unit_ball(dim=3, depth=0.6):
    """Flat space around the unit ball, charted so the sphere is ``{x_m = 0}``."""
    params = {"c0": 1.0, "c1": -1.0, "c2": 0.0, "fiber_curvature": 1.0}
    lower = [-1.0] * (dim - 1) + [0.0]
    upper = [1.0] * (dim - 1) + [depth]
    return build_metric("warped_product", dim, params, (lower, upper))
