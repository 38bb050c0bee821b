"""Datasets, priors, model families and the aggregated posterior potential.

The posterior potential over theta is

    W_n(theta) = sum_i U(xi_i, theta) + V0(theta),

assembled from a model family (per-observation potential U plus exact
simulation) and a log-concave prior.  Only the gradient of W_n is ever
needed; the normalizing constant is never computed.

Aggregation of regularity constants: a rho-strongly-convex per-observation
model yields an (n*rho)-strongly-convex sum (the prior's curvature is a
free extra and is not counted); a curvature-sandwich model with r = q
yields the pair (c1 * n^{1-r}, r) for the lower branch and flat smoothness
n*L for the upper one.  The stored gradient-Lipschitz constant includes the
prior's contribution so it is a true bound for the full potential.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CapabilityError, ParameterError
from .potentials import (
    Potential,
    Smoothness,
    StronglyConvex,
    WeaklyConvexKL,
    builtin_logistic,
    find_minimizer,
)
from .rng import stream


@dataclass(frozen=True)
class Prior:
    """Log-prior potential V0 with gradient and Lipschitz constant of grad V0."""

    v0: callable
    grad_v0: callable
    lip: float
    hess_v0: callable = None
    name: str = ""


def standard_gaussian_prior(d: int) -> Prior:
    """V0(theta) = |theta|^2 / 2; gradient is 1-Lipschitz."""

    def v0(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum(x**2, axis=-1)

    def grad_v0(x):
        return np.asarray(x, dtype=float)

    def hess_v0(x, v):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(v, np.broadcast_shapes(np.shape(x), v.shape)).copy()

    return Prior(
        v0=v0, grad_v0=grad_v0, lip=1.0, hess_v0=hess_v0, name=f"standard_gaussian(d={d})"
    )


@dataclass(frozen=True)
class Dataset:
    """Observations plus the manifest fields that regenerate them bit-identically."""

    observations: np.ndarray  # (n, q)
    model_id: str
    theta_star: np.ndarray
    seed: int

    def __post_init__(self):
        obs = np.atleast_2d(np.asarray(self.observations, dtype=float))
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "theta_star", np.asarray(self.theta_star, dtype=float))
        if not np.all(np.isfinite(obs)):
            raise ParameterError("observations must be finite")

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    def manifest(self) -> dict:
        return {
            "model_id": self.model_id,
            "theta_star": [float(t) for t in self.theta_star],
            "n": int(self.n),
            "seed": int(self.seed),
        }


def export_dataset(data: Dataset, csv_path, manifest_path) -> None:
    """CSV with a header row (one observation per line) + JSON sidecar manifest."""
    q = data.observations.shape[1]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"obs_{j}" for j in range(q)])
        for row in data.observations:
            writer.writerow([f"{v:.17g}" for v in row])
    with open(manifest_path, "w") as fh:
        json.dump(data.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def import_dataset(csv_path, manifest_path) -> Dataset:
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    obs = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return Dataset(
        observations=obs,
        model_id=manifest["model_id"],
        theta_star=np.asarray(manifest["theta_star"], dtype=float),
        seed=int(manifest["seed"]),
    )


class GaussianLocationModel:
    """Observations xi ~ N(theta, I/precision); U(xi, theta) = (rho/2)|xi-theta|^2.

    A location model, so the per-distribution Poincare constant is the same
    for every theta: C_P = 1/precision (Bakry-Emery, tight for Gaussians).
    Identifiability holds with the coordinate map and alpha_c = 1, b1 = 1.
    """

    def __init__(self, d: int, precision: float = 1.0, alpha_c: float = 1.0, b1: float = 1.0):
        if d < 1:
            raise ParameterError("d must be >= 1")
        if not precision > 0:
            raise ParameterError("precision must be positive")
        self.d = int(d)
        self.q = int(d)
        self.precision = float(precision)
        self.alpha_c = float(alpha_c)
        self.b1 = float(b1)
        self.C_P = 1.0 / self.precision
        self.per_obs_L = self.precision
        self.per_obs_profile = StronglyConvex(self.precision)

    @property
    def model_id(self) -> str:
        return f"gaussian_location(d={self.d},precision={self.precision})"

    def sample(self, theta_star, n: int, rng: np.random.Generator) -> np.ndarray:
        theta_star = np.broadcast_to(np.asarray(theta_star, dtype=float), (self.d,))
        sigma = 1.0 / math.sqrt(self.precision)
        return theta_star + sigma * rng.standard_normal((n, self.q))

    def psi(self, obs: np.ndarray) -> np.ndarray:
        """The 1-Lipschitz test statistic: first coordinate of the observation."""
        return obs[..., 0]

    def psi_mean(self, theta) -> float:
        return float(np.asarray(theta, dtype=float).reshape(-1)[0])

    def score(self, obs: np.ndarray, theta) -> np.ndarray:
        """Per-observation parameter gradient of U at theta: rho (theta - xi)."""
        theta = np.asarray(theta, dtype=float)
        return self.precision * (theta - obs)

    def sum_potential(self, obs: np.ndarray):
        """Closed-form aggregate of sum_i U(xi_i, .) via sufficient statistics.

        Algebraically equal to the streamed per-observation sum:
        (rho/2) sum |theta - xi_i|^2 = (n rho/2)|theta|^2 - rho <s, theta> + (rho/2) ssq.
        """
        rho = self.precision
        n = obs.shape[0]
        s = obs.sum(axis=0)
        ssq = float(np.sum(obs**2))

        def value(theta):
            theta = np.asarray(theta, dtype=float)
            return (
                0.5 * n * rho * np.sum(theta**2, axis=-1)
                - rho * np.tensordot(theta, s, axes=([-1], [0]))
                + 0.5 * rho * ssq
            )

        def grad(theta):
            theta = np.asarray(theta, dtype=float)
            return n * rho * theta - rho * s

        def hess_vec(theta, v):
            v = np.asarray(v, dtype=float)
            shape = np.broadcast_shapes(np.shape(theta), v.shape)
            return n * rho * np.broadcast_to(v, shape).copy()

        return value, grad, hess_vec

    def streamed_potential(self, obs: np.ndarray, chunk: int = 1024):
        """Reference per-observation sum, streamed in fixed chunks."""
        rho = self.precision

        def value(theta):
            theta = np.asarray(theta, dtype=float)
            total = np.zeros(theta.shape[:-1])
            for k in range(0, obs.shape[0], chunk):
                block = obs[k : k + chunk]
                diff = theta[..., None, :] - block
                total = total + 0.5 * rho * np.sum(diff**2, axis=(-2, -1))
            return total

        def grad(theta):
            theta = np.asarray(theta, dtype=float)
            total = np.zeros(theta.shape)
            for k in range(0, obs.shape[0], chunk):
                block = obs[k : k + chunk]
                total = total + rho * np.sum(theta[..., None, :] - block, axis=-2)
            return total

        return value, grad


class PPowerLocationModel:
    """Location model with the weakly convex per-observation potential
    U(xi, theta) = (1 + |theta - xi|^2)^p, p in (1/2, 1].

    Used to exercise weakly convex aggregation; the density e^{-U} admits
    no exact sampler here, so :func:`sample_dataset` refuses this family.
    """

    def __init__(self, d: int, p: float = 0.75, alpha_c: float = 1.0, b1: float = 1.0):
        if not (0.5 < p <= 1.0):
            raise ParameterError("p must lie in (1/2, 1]")
        self.d = int(d)
        self.q = int(d)
        self.p = float(p)
        self.alpha_c = float(alpha_c)
        self.b1 = float(b1)
        self.C_P = None
        r = (1.0 - p) / p
        self.per_obs_profile = WeaklyConvexKL(
            c1=2.0 * p * (2.0 * p - 1.0), c2=2.0 * p, q=r, r=r
        )
        self.per_obs_L = 2.0 * p

    @property
    def model_id(self) -> str:
        return f"p_power_location(d={self.d},p={self.p})"

    def sum_potential(self, obs: np.ndarray, chunk: int = 512):
        p = self.p

        def _u(theta):
            # (..., n_chunk) bump values for one observation block
            return lambda block: (
                1.0 + np.sum((np.asarray(theta)[..., None, :] - block) ** 2, axis=-1)
            )

        def value(theta):
            theta = np.asarray(theta, dtype=float)
            total = np.zeros(theta.shape[:-1])
            for k in range(0, obs.shape[0], chunk):
                u = _u(theta)(obs[k : k + chunk])
                total = total + np.sum(u**p, axis=-1)
            return total

        def grad(theta):
            theta = np.asarray(theta, dtype=float)
            total = np.zeros(theta.shape)
            for k in range(0, obs.shape[0], chunk):
                block = obs[k : k + chunk]
                diff = theta[..., None, :] - block
                u = 1.0 + np.sum(diff**2, axis=-1)
                total = total + 2.0 * p * np.sum(u[..., None] ** (p - 1.0) * diff, axis=-2)
            return total

        def hess_vec(theta, v):
            theta = np.asarray(theta, dtype=float)
            v = np.asarray(v, dtype=float)
            out = np.zeros(np.broadcast_shapes(theta.shape, v.shape))
            for k in range(0, obs.shape[0], chunk):
                block = obs[k : k + chunk]
                diff = theta[..., None, :] - block
                u = 1.0 + np.sum(diff**2, axis=-1)
                dv = np.sum(diff * v[..., None, :], axis=-1)
                out = out + np.sum(
                    2.0 * p * u[..., None] ** (p - 1.0) * v[..., None, :]
                    + 4.0 * p * (p - 1.0) * (u ** (p - 2.0) * dv)[..., None] * diff,
                    axis=-2,
                )
            return out

        return value, grad, hess_vec


class LogisticModel:
    """Logistic regression with a fixed design: observation i carries feature
    row design[i % m] and a label in {-1, +1}.

    Stored observations are (feature vector, label) rows in R^{d+1}.
    Identifiability constants are user-declared metadata; no exact Poincare
    constant is claimed.
    """

    def __init__(self, design, ridge: float = 0.0, alpha_c: float = 1.0, b1: float = 1.0,
                 C_P: Optional[float] = None):
        design = np.atleast_2d(np.asarray(design, dtype=float))
        if design.shape[0] == 0:
            raise ParameterError("empty design")
        self.design = design
        self.d = design.shape[1]
        self.q = self.d + 1
        self.ridge = float(ridge)
        self.alpha_c = float(alpha_c)
        self.b1 = float(b1)
        self.C_P = C_P
        self.per_obs_L = float(np.max(np.sum(design**2, axis=1)) / 4.0 + self.ridge)
        self.per_obs_profile = StronglyConvex(self.ridge) if self.ridge > 0 else None

    @property
    def model_id(self) -> str:
        return f"logistic(d={self.d},m={self.design.shape[0]},ridge={self.ridge})"

    def sample(self, theta_star, n: int, rng: np.random.Generator) -> np.ndarray:
        theta_star = np.broadcast_to(np.asarray(theta_star, dtype=float), (self.d,))
        feats = self.design[np.arange(n) % self.design.shape[0]]
        p_plus = 1.0 / (1.0 + np.exp(-feats @ theta_star))
        labels = np.where(rng.random(n) < p_plus, 1.0, -1.0)
        return np.concatenate([feats, labels[:, None]], axis=1)

    def psi(self, obs: np.ndarray) -> np.ndarray:
        return obs[..., -1]

    def psi_mean(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        z = self.design @ theta
        return float(np.mean(np.tanh(z / 2.0)))  # E[y] = 2 sigma(z) - 1


@dataclass(frozen=True)
class PosteriorPotential:
    """The aggregated potential over theta, with posterior bookkeeping."""

    potential: Potential
    n: int
    mode: np.ndarray
    prior: Prior
    base_profile: object
    base_L: float

    def __getattr__(self, item):
        # convenience pass-through for value/grad/hess_vec/profile/etc.
        if item == "potential":
            raise AttributeError(item)
        return getattr(self.potential, item)


def build_posterior(model, data: Dataset, prior: Prior) -> PosteriorPotential:
    """Assemble W_n = sum_i U(xi_i, .) + V0 with aggregated constants.

    The per-observation sum uses the model's sufficient-statistic closed
    form when available (Gaussian location), otherwise a streamed
    vectorized sum; either way one accumulator, no n x d scratch.
    """
    obs = data.observations
    n = obs.shape[0]

    if isinstance(model, GaussianLocationModel):
        if n > 0 and obs.shape[1] != model.q:
            raise ParameterError(
                f"observation dimension {obs.shape[1]} does not match model q={model.q}"
            )
        d = model.d
        if n > 0:
            base_value, base_grad, base_hess_vec = model.sum_potential(obs)
        else:
            base_value = lambda theta: np.zeros(np.shape(theta)[:-1])
            base_grad = lambda theta: np.zeros(np.shape(theta))
            base_hess_vec = lambda theta, v: np.zeros(
                np.broadcast_shapes(np.shape(theta), np.shape(v))
            )
        rho = model.precision
        agg_profile = StronglyConvex(n * rho) if n > 0 else None
        base_L = n * rho
    elif isinstance(model, PPowerLocationModel):
        d = model.d
        if n > 0 and obs.shape[1] != model.q:
            raise ParameterError(
                f"observation dimension {obs.shape[1]} does not match model q={model.q}"
            )
        if n > 0:
            base_value, base_grad, base_hess_vec = model.sum_potential(obs)
        else:
            base_value = lambda theta: np.zeros(np.shape(theta)[:-1])
            base_grad = lambda theta: np.zeros(np.shape(theta))
            base_hess_vec = lambda theta, v: np.zeros(
                np.broadcast_shapes(np.shape(theta), np.shape(v))
            )
        agg_profile = None
        base_L = n * model.per_obs_L
    elif isinstance(model, LogisticModel):
        d = model.d
        if n > 0 and obs.shape[1] != model.d + 1:
            raise ParameterError("logistic observations must be (features, label) rows")
        # per-observation ridge accumulates n-fold in the sum
        inner = builtin_logistic(obs[:, :-1], obs[:, -1], ridge=n * model.ridge) if n > 0 else None
        base_value = inner.value if inner else (lambda t: np.zeros(np.shape(t)[:-1]))
        base_grad = inner.grad if inner else (lambda t: np.zeros(np.shape(t)))
        base_hess_vec = (
            inner.hess_vec
            if inner
            else (lambda t, v: np.zeros(np.broadcast_shapes(np.shape(t), np.shape(v))))
        )
        agg_profile = StronglyConvex(n * model.ridge) if (model.ridge > 0 and n > 0) else None
        base_L = n * model.per_obs_L
    else:
        raise CapabilityError(f"unsupported model family: {model!r}")

    # weakly convex aggregation: (c1 n^{1-r}, r) lower branch, flat n L upper
    if isinstance(getattr(model, "per_obs_profile", None), WeaklyConvexKL) and n > 0:
        pr = model.per_obs_profile
        if pr.r != pr.q:
            raise CapabilityError("aggregation of curvature profiles requires r == q")
        agg_profile = WeaklyConvexKL(
            c1=pr.c1 * n ** (1.0 - pr.r), c2=n * model.per_obs_L, q=0.0, r=pr.r
        )

    def value(theta):
        return base_value(theta) + prior.v0(theta)

    def grad(theta):
        return base_grad(theta) + prior.grad_v0(theta)

    if prior.hess_v0 is None:
        raise CapabilityError("posterior assembly needs a prior with hess_v0")

    def hess_vec(theta, v):
        return base_hess_vec(theta, v) + prior.hess_v0(theta, np.asarray(v, dtype=float))

    total_L = base_L + prior.lip
    pot = Potential(
        dim=d,
        value=value,
        grad=grad,
        hess_vec=hess_vec,
        smoothness=Smoothness(L=max(total_L, prior.lip)),
        profile=agg_profile,
        minimizer_hint=None,
        offset=0.0,
        name=f"posterior[{model.model_id}, n={n}]",
    )
    mode = find_minimizer(pot, np.zeros(d), tol_grad=1e-9 * max(1.0, total_L))
    w_min = float(pot.value(mode))
    pot = Potential(
        dim=d,
        value=value,
        grad=grad,
        hess_vec=hess_vec,
        smoothness=pot.smoothness,
        profile=agg_profile,
        minimizer_hint=mode,
        offset=1.0 - w_min,
        name=pot.name,
    )
    return PosteriorPotential(
        potential=pot,
        n=n,
        mode=mode,
        prior=prior,
        base_profile=getattr(model, "per_obs_profile", None),
        base_L=base_L,
    )


def sample_dataset(model, theta_star, n: int, seed: int) -> Dataset:
    """n i.i.d. draws from the model at theta_star, deterministic in seed."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not hasattr(model, "sample"):
        raise CapabilityError(f"model {model!r} does not support exact simulation")
    rng = stream(seed)
    obs = model.sample(theta_star, n, rng)
    return Dataset(
        observations=obs,
        model_id=model.model_id,
        theta_star=np.broadcast_to(np.asarray(theta_star, dtype=float), (model.d,)).copy(),
        seed=int(seed),
    )


def epsilon_n(C_P: float, L: float, alpha_c: float, d: int, n, b1: float = 1.0):
    """Statistical accuracy eps_n with eps_n^2 = (C_P L^2 d log(n) / n)^{1/alpha_c}.

    Returns (eps_n, valid) where ``valid`` flags b1 * eps_n^alpha_c <= 1,
    the regime in which the consistency bound applies.
    """
    if n < 2:
        raise ParameterError("n must be >= 2 so that log n > 0")
    if alpha_c < 1:
        raise ParameterError("alpha_c must be >= 1")
    eps_sq = (C_P * L**2 * d * math.log(n) / n) ** (1.0 / alpha_c)
    eps = math.sqrt(eps_sq)
    return eps, bool(b1 * eps**alpha_c <= 1.0)
