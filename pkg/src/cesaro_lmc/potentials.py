"""Convex potentials with curvature metadata and numeric regularity checks.

A :class:`Potential` bundles evaluators for W, its gradient and
Hessian-vector products with the regularity constants the tuning formulas
consume: the gradient Lipschitz constant L, and either a strong-convexity
modulus rho or a curvature-vs-height profile (c1, c2, q, r) sandwiching the
Hessian spectrum between ``c1*W^-r`` and ``c2*W^-q``.

Evaluators are pure functions accepting a single point ``(d,)`` or a batch
``(m, d)`` and are safe to share across workers.  Hessians are exposed only
through matrix-vector products; dense matrices are assembled only inside
verification oracles for d <= 50.

Profile checks interpret W through ``value(x) + offset`` where ``offset``
shifts the minimum value to 1; the curvature-vs-height inequalities are
stated for that normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import CapabilityError, NumericError, ParameterError
from .rng import stream


@dataclass(frozen=True)
class StronglyConvex:
    """Hessian bounded below by rho * identity."""

    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ParameterError(f"rho must be positive, got {self.rho}")


@dataclass(frozen=True)
class WeaklyConvexKL:
    """Curvature sandwich c1*W^-r <= lambda_min <= lambda_max <= c2*W^-q."""

    c1: float
    c2: float
    q: float
    r: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ParameterError("c1 and c2 must be positive")
        if not (0 <= self.q <= self.r < 1):
            raise ParameterError(
                f"exponents must satisfy 0 <= q <= r < 1, got q={self.q}, r={self.r}"
            )


ConvexityProfile = Union[StronglyConvex, WeaklyConvexKL]


@dataclass(frozen=True)
class Smoothness:
    """Gradient/Hessian regularity constants.

    L bounds the gradient Lipschitz constant; L_tilde, when present, bounds
    the Hessian Lipschitz constant in spectral norm; lap_grad_sup bounds the
    sup-norm of the componentwise Laplacian of the gradient field.
    """

    L: float
    L_tilde: Optional[float] = None
    lap_grad_sup: Optional[float] = None
    rho_lap: Optional[float] = None  # growth exponent: lap_grad_sup^2 <= C d^(2 rho_lap)

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ParameterError(f"L must be finite and positive, got {self.L}")
        for name in ("L_tilde", "lap_grad_sup"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class Potential:
    """A twice-differentiable convex potential on R^d.

    ``value``/``grad``/``hess_vec`` accept points of shape ``(d,)`` or
    batches ``(m, d)``.  ``offset`` is the additive constant placing the
    minimum of the *normalized* potential at 1 (used by every W-power
    check); ``value`` itself is the raw formula.
    """

    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess_vec: Callable[[np.ndarray, np.ndarray], np.ndarray]
    smoothness: Smoothness
    profile: Optional[ConvexityProfile]
    minimizer_hint: Optional[np.ndarray] = None
    offset: float = 0.0
    name: str = ""
    profile_note: str = ""

    def value_normalized(self, x: np.ndarray) -> np.ndarray:
        """W shifted so its minimum sits at 1."""
        return self.value(x) + self.offset


def _as_point(x, dim) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ParameterError(f"point has dimension {x.shape[-1]}, expected {dim}")
    return x


def builtin_gaussian_location(d: int, mean, precision: float) -> Potential:
    """Quadratic potential W(x) = (rho/2) |x - mean|^2.

    The canonical strongly convex instance with rho = L = precision.
    """
    if d < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    if not precision > 0:
        raise ParameterError(f"precision must be positive, got {precision}")
    rho = float(precision)
    m = np.broadcast_to(np.asarray(mean, dtype=float), (d,)).copy()

    def value(x):
        x = _as_point(x, d)
        return 0.5 * rho * np.sum((x - m) ** 2, axis=-1)

    def grad(x):
        x = _as_point(x, d)
        return rho * (x - m)

    def hess_vec(x, v):
        v = np.asarray(v, dtype=float)
        return rho * np.broadcast_to(v, np.broadcast_shapes(np.shape(x), v.shape)).copy()

    return Potential(
        dim=d,
        value=value,
        grad=grad,
        hess_vec=hess_vec,
        smoothness=Smoothness(L=rho, L_tilde=0.0, lap_grad_sup=0.0, rho_lap=0.0),
        profile=StronglyConvex(rho),
        minimizer_hint=m,
        offset=1.0,
        name=f"gaussian(d={d},rho={rho})",
    )


def builtin_p_power(d: int, center, p: float) -> Potential:
    """W(x) = (1 + |x - center|^2)^p with p in (1/2, 1].

    Satisfies the curvature-vs-height sandwich with r = q = (1-p)/p,
    c1 = 2p(2p-1), c2 = 2p; hence L = 2p.
    """
    if d < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    if not (0.5 < p <= 1.0):
        raise ParameterError(f"p must lie in (1/2, 1], got {p}")
    c = np.broadcast_to(np.asarray(center, dtype=float), (d,)).copy()
    p = float(p)

    def value(x):
        x = _as_point(x, d)
        u = 1.0 + np.sum((x - c) ** 2, axis=-1)
        return u**p

    def grad(x):
        x = _as_point(x, d)
        y = x - c
        u = 1.0 + np.sum(y**2, axis=-1)
        return 2.0 * p * u[..., None] ** (p - 1.0) * y

    def hess_vec(x, v):
        x = _as_point(x, d)
        v = np.asarray(v, dtype=float)
        y = x - c
        u = 1.0 + np.sum(y**2, axis=-1)
        yv = np.sum(y * v, axis=-1)
        return (
            2.0 * p * u[..., None] ** (p - 1.0) * v
            + 4.0 * p * (p - 1.0) * (u ** (p - 2.0) * yv)[..., None] * y
        )

    r = (1.0 - p) / p
    # Third-derivative bounds for u >= 1 (spectral norm of D^3 W along unit
    # directions, and |Laplacian of the gradient field|); both decay like
    # u^{p-3/2} so the supremum is taken at u = 1.
    l_tilde = 12.0 * p * (1.0 - p) + 8.0 * p * (1.0 - p) * (2.0 - p)
    lap_sup = p * (1.0 - p) * (8.0 * (2.0 - p) + 4.0 * (d + 2.0))
    return Potential(
        dim=d,
        value=value,
        grad=grad,
        hess_vec=hess_vec,
        smoothness=Smoothness(L=2.0 * p, L_tilde=l_tilde, lap_grad_sup=lap_sup, rho_lap=1.0),
        profile=WeaklyConvexKL(c1=2.0 * p * (2.0 * p - 1.0), c2=2.0 * p, q=r, r=r),
        minimizer_hint=c,
        offset=0.0,
        name=f"p_power(d={d},p={p})",
    )


def builtin_logistic(features, labels, ridge: float = 0.0) -> Potential:
    """Ridge-regularized logistic potential over the parameter theta.

    W(theta) = sum_i log(1 + exp(-y_i <a_i, theta>)) + (ridge/2)|theta|^2.
    Strongly convex with modulus ``ridge`` when ridge > 0; without ridge no
    curvature profile is claimed (flagged "kl-unverified").
    """
    a = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.atleast_1d(np.asarray(labels, dtype=float))
    if a.shape[0] == 0:
        raise ParameterError("empty feature set")
    if a.shape[0] != y.shape[0]:
        raise ParameterError("features and labels disagree in length")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ParameterError("labels must lie in {-1, +1}")
    if ridge < 0:
        raise ParameterError(f"ridge must be >= 0, got {ridge}")
    d = a.shape[1]
    mu = float(ridge)
    ya = y[:, None] * a  # (n_obs, d)

    def value(x):
        x = _as_point(x, d)
        z = np.tensordot(x, ya, axes=([-1], [1]))  # (..., n_obs)
        return np.sum(np.logaddexp(0.0, -z), axis=-1) + 0.5 * mu * np.sum(x**2, axis=-1)

    def grad(x):
        x = _as_point(x, d)
        z = np.tensordot(x, ya, axes=([-1], [1]))
        s = _sigmoid(-z)  # (..., n_obs)
        return -np.tensordot(s, ya, axes=([-1], [0])) + mu * x

    def hess_vec(x, v):
        x = _as_point(x, d)
        v = np.asarray(v, dtype=float)
        z = np.tensordot(x, ya, axes=([-1], [1]))
        w = _sigmoid(z) * _sigmoid(-z)  # (..., n_obs)
        av = np.tensordot(v, ya, axes=([-1], [1]))
        return np.tensordot(w * av, ya, axes=([-1], [0])) + mu * v

    # Hessian = sum_i a_i a_i^T sigma(1-sigma) + mu I, so the summed bound
    # applies; the all-zero design has a constant gradient, keep L positive
    L = float(max(np.sum(np.sum(a**2, axis=1)) / 4.0 + mu, 1e-12))
    profile = StronglyConvex(mu) if mu > 0 else None
    return Potential(
        dim=d,
        value=value,
        grad=grad,
        hess_vec=hess_vec,
        smoothness=Smoothness(L=L),
        profile=profile,
        minimizer_hint=None,
        offset=0.0,
        name=f"logistic(d={d},n={a.shape[0]},ridge={mu})",
        profile_note="" if mu > 0 else "kl-unverified",
    )


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dense_hessian(pot: Potential, x) -> np.ndarray:
    """Assemble the full Hessian from matrix-vector products (d <= 50 only)."""
    if pot.dim > 50:
        raise CapabilityError("dense Hessians are reconstructed only for d <= 50")
    x = np.asarray(x, dtype=float)
    eye = np.eye(pot.dim)
    cols = [pot.hess_vec(x, eye[j]) for j in range(pot.dim)]
    return np.stack(cols, axis=-1)


def hessian_extreme_eigs(
    pot: Potential, x, tol: float = 1e-10, max_iter: int = 20000, seed: int = 0
) -> tuple[float, float]:
    """Extreme Hessian eigenvalues at x via power iteration.

    Runs power iteration on H for the top eigenvalue, then on sigma*I - H
    with sigma set to the top estimate for the bottom one.  Raises
    :class:`NumericError` with the iteration count if either loop fails to
    stabilize its Rayleigh quotient to relative tolerance ``tol``.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    x = np.asarray(x, dtype=float)
    rng = stream(seed)

    def top_eig(matvec):
        v = rng.standard_normal(pot.dim)
        v /= np.linalg.norm(v)
        lam = np.dot(v, matvec(v))
        for it in range(1, max_iter + 1):
            w = matvec(v)
            nw = np.linalg.norm(w)
            if nw == 0.0:  # H v = 0 exactly: 0 is the top eigenvalue of matvec
                return 0.0
            v = w / nw
            lam_new = np.dot(v, matvec(v))
            if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
                return lam_new
            lam = lam_new
        raise NumericError(
            f"power iteration did not converge in {max_iter} iterations",
            payload={"iterations": max_iter, "last": lam},
        )

    lam_max = top_eig(lambda v: pot.hess_vec(x, v))
    sigma = lam_max * (1.0 + 1e-3) + 1e-12
    shifted_top = top_eig(lambda v: sigma * v - pot.hess_vec(x, v))
    lam_min = sigma - shifted_top
    return float(lam_min), float(lam_max)


def find_minimizer(pot: Potential, x0, tol_grad: float = 1e-10, max_iter: int = 200000):
    """Gradient descent with step 1/L until the gradient norm drops below tol.

    Raises :class:`NumericError` carrying the best iterate if the cap is hit.
    """
    if not tol_grad > 0:
        raise ParameterError("tol_grad must be positive")
    x = np.asarray(x0, dtype=float).copy()
    step = 1.0 / pot.smoothness.L
    best = x.copy()
    best_norm = np.inf
    for _ in range(max_iter):
        g = pot.grad(x)
        gn = float(np.linalg.norm(g))
        if gn < best_norm:
            best_norm, best = gn, x.copy()
        if gn <= tol_grad:
            return x
        x = x - step * g
    raise NumericError(
        f"gradient descent did not reach |grad| <= {tol_grad} in {max_iter} iterations",
        payload={"best_iterate": best, "best_grad_norm": best_norm},
    )


@dataclass(frozen=True)
class ProfileReport:
    """Outcome of a probe-based regularity check."""

    passed: bool
    n_probes: int
    worst: dict = field(default_factory=dict)
    violating_probe: Optional[np.ndarray] = None
    detail: str = ""


def probe_points(center: np.ndarray, radius: float, n_probes: int, seed: int) -> np.ndarray:
    """Probes on spheres of log-spaced radii around ``center``.

    Radii span [radius * 1e-3, radius] so both the near-minimizer and tail
    regimes of the curvature inequalities get exercised.
    """
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    rng = stream(seed)
    radii = np.geomspace(radius * 1e-3, radius, n_probes)
    z = rng.standard_normal((n_probes, d))
    z /= np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-300)
    return center + radii[:, None] * z


_SLACK = 1e-8


def verify_kl_profile(
    pot: Potential, n_probes: int = 10000, radius: float = 10.0, seed: int = 0
) -> ProfileReport:
    """Check the curvature sandwich c1 W^-r <= eigs <= c2 W^-q at probe points.

    Always returns a report; failure is a report field.  Eigenvalues come
    from a dense eigendecomposition (d <= 50).
    """
    prof = pot.profile
    if not isinstance(prof, WeaklyConvexKL):
        raise ParameterError("potential does not carry a weakly convex profile")
    x_star = pot.minimizer_hint
    if x_star is None:
        x_star = find_minimizer(pot, np.zeros(pot.dim))
    pts = probe_points(x_star, radius, n_probes, seed)
    w = pot.value_normalized(pts)
    hess = dense_hessian(pot, pts)  # (n_probes, d, d)
    eigs = np.linalg.eigvalsh(0.5 * (hess + np.swapaxes(hess, -1, -2)))
    lo = eigs[:, 0] * w**prof.r / prof.c1  # want >= 1
    hi = eigs[:, -1] * w**prof.q / prof.c2  # want <= 1
    worst_lo = float(np.min(lo))
    worst_hi = float(np.max(hi))
    passed = (worst_lo >= 1.0 - _SLACK) and (worst_hi <= 1.0 + _SLACK)
    if passed:
        bad = None
    elif worst_lo < 1.0 - _SLACK:
        bad = pts[int(np.argmin(lo))]
    else:
        bad = pts[int(np.argmax(hi))]
    return ProfileReport(
        passed=bool(passed),
        n_probes=n_probes,
        worst={"lambda_min_ratio": float(worst_lo), "lambda_max_ratio": float(worst_hi)},
        violating_probe=None if passed else bad,
        detail="lambda_min*W^r/c1 must stay >= 1 and lambda_max*W^q/c2 <= 1",
    )


def verify_grad_bounds(
    pot: Potential, n_probes: int = 1000, radius: float = 10.0, seed: int = 0
) -> ProfileReport:
    """Check the gradient and quadratic-growth consequences of the profile.

    With W normalized to min 1 and the sandwich constants (c1, c2, q, r),
    every probe x must satisfy

        c1/(1-r) (W^{1-r}(x) - W^{1-r}(x*)) <= |grad W(x)|^2
        |grad W(x)|^2 <= 2 c2/(1-q) (W^{1-q}(x) - W^{1-q}(x*))
        W^{1+r}(x) - W^{1+r}(x*) >= (1+r) c1 / 2 |x - x*|^2
        W^{1+q}(x) - W^{1+q}(x*) <= c2 (1+q)/(1-q) |x - x*|^2

    (integrating the sandwich along the gradient flow; at x = x* all sides
    vanish).  Failure is reported, not raised.
    """
    prof = pot.profile
    if isinstance(prof, StronglyConvex):
        # embed as the degenerate sandwich with flat exponents
        prof = WeaklyConvexKL(c1=prof.rho, c2=pot.smoothness.L, q=0.0, r=0.0)
    if not isinstance(prof, WeaklyConvexKL):
        raise ParameterError("potential carries no convexity profile")
    x_star = pot.minimizer_hint
    if x_star is None:
        x_star = find_minimizer(pot, np.zeros(pot.dim))
    pts = probe_points(x_star, radius, n_probes, seed)
    w = pot.value_normalized(pts)
    w_star = float(pot.value_normalized(x_star))
    g2 = np.sum(pot.grad(pts) ** 2, axis=-1)
    dist2 = np.sum((pts - x_star) ** 2, axis=-1)
    c1, c2, q, r = prof.c1, prof.c2, prof.q, prof.r

    lower_grad = c1 / (1.0 - r) * (w ** (1.0 - r) - w_star ** (1.0 - r))
    upper_grad = 2.0 * c2 / (1.0 - q) * (w ** (1.0 - q) - w_star ** (1.0 - q))
    lower_quad = (1.0 + r) * c1 / 2.0 * dist2
    upper_quad = c2 * (1.0 + q) / (1.0 - q) * dist2
    scale = np.maximum.reduce([np.abs(g2), np.abs(lower_grad), np.ones_like(g2)])
    ok = (
        (lower_grad <= g2 + _SLACK * scale)
        & (g2 <= upper_grad + _SLACK * scale)
        & (w ** (1.0 + r) - w_star ** (1.0 + r) >= lower_quad - _SLACK * scale)
        & (w ** (1.0 + q) - w_star ** (1.0 + q) <= upper_quad + _SLACK * scale)
    )
    passed = bool(np.all(ok))
    worst = {
        "grad_lower_margin": float(np.min(g2 - lower_grad)),
        "grad_upper_margin": float(np.min(upper_grad - g2)),
        "quad_lower_margin": float(np.min(w ** (1.0 + r) - w_star ** (1.0 + r) - lower_quad)),
        "quad_upper_margin": float(np.min(upper_quad - (w ** (1.0 + q) - w_star ** (1.0 + q)))),
    }
    bad = None if passed else pts[int(np.argmin(ok))]
    return ProfileReport(
        passed=passed, n_probes=n_probes, worst=worst, violating_probe=bad
    )
