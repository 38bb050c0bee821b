"""Statistical verification layer: MSE experiments, rate fits,
concentration checks, the separation test family, and moment diagnostics.

Empirical-versus-bound assertions are one-sided with a three-binomial-
standard-error slack.  MSE reports keep every replicate estimate so the
summary numbers can be recomputed bit-identically, and carry a manifest
that regenerates the experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ExperimentError, ParameterError
from .potentials import Potential, find_minimizer
from .rng import mix64, stream
from .sampler import ChainConfig, moment_clamp, replicate_runs
from .tuning import TuningPlan, compute_upsilon
from .potentials import StronglyConvex, WeaklyConvexKL


@dataclass(frozen=True)
class ExperimentReport:
    estimates: np.ndarray  # (M, d) replicate Cesaro estimates
    reference: np.ndarray
    reference_provenance: str  # quadrature | closed-form | reference-chain
    mse: float
    ci: tuple  # bootstrap 95% interval on the MSE
    manifest: dict = field(default_factory=dict)
    n_diverged: int = 0

    def recompute_mse(self) -> float:
        return float(np.mean(np.sum((self.estimates - self.reference) ** 2, axis=1)))


@dataclass(frozen=True)
class RateFit:
    x: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    r2: float

    def slope_trustworthy(self) -> bool:
        """Refuse slope assertions on poor fits."""
        return self.r2 >= 0.9


def fit_line(x, y) -> RateFit:
    """Ordinary least squares through the normal equations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ParameterError("need matching x/y with at least two points")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    sxy = float(np.sum((x - xm) * (y - ym)))
    slope = sxy / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    return RateFit(x=x, y=y, slope=slope, intercept=intercept, r2=r2)


def _bootstrap_ci(sq_errors: np.ndarray, seed: int, resamples: int = 2000):
    rng = stream(mix64(seed, 0xB007))
    m = sq_errors.shape[0]
    idx = rng.integers(0, m, size=(resamples, m))
    means = sq_errors[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi)


def mse_experiment(
    pot: Potential,
    plan: TuningPlan,
    m_replicates: int,
    reference,
    base_seed: int,
    x0=None,
    reference_provenance: str = "closed-form",
    jobs: int = 1,
) -> ExperimentReport:
    """M tuned chains; MSE of the Cesaro estimates against the reference.

    Chains start at the potential's minimizer unless ``x0`` is given.
    ``jobs`` only chunks the replicate batch (per-replicate streams make
    results identical at any chunking).  Raises :class:`ExperimentError`
    when more than 10% of replicates diverge.
    """
    if m_replicates < 1:
        raise ParameterError("need at least one replicate")
    if jobs < 1:
        raise ParameterError("jobs must be >= 1")
    reference = np.atleast_1d(np.asarray(reference, dtype=float))
    if x0 is None:
        x0 = pot.minimizer_hint
        if x0 is None:
            x0 = find_minimizer(pot, np.zeros(pot.dim))
    cfg = ChainConfig(gamma=plan.gamma, n_steps=plan.n_steps, x0=x0, seed=0)
    chunk = -(-m_replicates // jobs)
    runs = []
    for start in range(0, m_replicates, chunk):
        count = min(chunk, m_replicates - start)
        runs.extend(replicate_runs(pot, cfg, count, base_seed, index_offset=start))
    diverged = [i for i, r in enumerate(runs) if r.diverged_step is not None]
    if len(diverged) > 0.1 * m_replicates:
        raise ExperimentError(
            f"{len(diverged)}/{m_replicates} replicates diverged",
            failures=[(i, runs[i].diverged_step) for i in diverged],
        )
    bad = set(diverged)
    est = np.stack([runs[i].cesaro for i in range(m_replicates) if i not in bad])
    sq = np.sum((est - reference) ** 2, axis=1)
    mse = float(np.mean(sq))
    ci = _bootstrap_ci(sq, base_seed)
    manifest = {
        "gamma": plan.gamma,
        "n_steps": plan.n_steps,
        "regime": plan.regime,
        "m_replicates": m_replicates,
        "base_seed": int(base_seed),
        "x0": [float(v) for v in np.atleast_1d(x0)],
        "potential": pot.name,
        "reference": [float(v) for v in reference],
        "reference_provenance": reference_provenance,
    }
    return ExperimentReport(
        estimates=est,
        reference=reference,
        reference_provenance=reference_provenance,
        mse=mse,
        ci=ci,
        manifest=manifest,
        n_diverged=len(diverged),
    )


def bayes_rate_experiment(
    model,
    prior,
    theta_star,
    n_grid: Sequence[int],
    m_datasets: int,
    base_seed: int,
    posterior_mean: Optional[Callable] = None,
) -> RateFit:
    """MSE of the oracle posterior mean versus n, fitted on log(n / log n).

    For each n, ``m_datasets`` fresh datasets are drawn and the posterior
    mean is computed by the supplied oracle (default: the conjugate closed
    form for the Gaussian location model).  Returns the OLS fit of
    log MSE against log(n / log n); the consistency theory predicts slope
    -1/alpha_c when the bound is tight.
    """
    from .bayes import GaussianLocationModel, sample_dataset

    n_grid = list(n_grid)
    if len(n_grid) < 4 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ParameterError("n_grid must be ascending with at least 4 points")
    theta_star = np.asarray(theta_star, dtype=float)

    if posterior_mean is None:
        if not isinstance(model, GaussianLocationModel):
            raise ParameterError("no default posterior-mean oracle for this model")

        def posterior_mean(data):
            # conjugate: N(0, I) prior, N(theta, I/rho) likelihood
            rho = model.precision
            return rho * data.observations.sum(axis=0) / (data.n * rho + 1.0)

    mses = []
    for j, n in enumerate(n_grid):
        errs = np.empty(m_datasets)
        for i in range(m_datasets):
            data = sample_dataset(model, theta_star, n, mix64(base_seed, j * m_datasets + i))
            tm = posterior_mean(data)
            errs[i] = float(np.sum((tm - theta_star) ** 2))
        mses.append(errs.mean())
    x = np.log(np.asarray(n_grid, dtype=float) / np.log(n_grid))
    y = np.log(np.asarray(mses))
    return fit_line(x, y)


@dataclass(frozen=True)
class BoundCheckRow:
    delta: float
    frequency: float
    bound: float
    slack: float  # three binomial standard errors
    passed: bool


def _binom_slack(bound_freq: float, m: int) -> float:
    p = min(max(bound_freq, 0.0), 1.0)
    return 3.0 * math.sqrt(p * (1.0 - p) / m) if 0 < p < 1 else 3.0 * math.sqrt(0.25 / m)


def concentration_check(
    model,
    theta,
    n: int,
    delta_grid: Sequence[float],
    m_sims: int,
    seed: int,
    statistic: str = "psi",
):
    """Simulated deviation frequencies against the Poincare concentration bound.

    ``statistic`` selects the checked event: "psi" is the deviation of the
    empirical mean of the 1-Lipschitz statistic (bound
    2 exp(-n (delta^2/(4 C_P) ^ delta/(2 sqrt(C_P))))), "score" the norm of
    the averaged parameter gradient at ``theta`` (bound with the extra
    dimension factor 2d and L-scaling from the union bound).
    """
    if model.C_P is None:
        raise ParameterError("model carries no exact Poincare constant")
    cp = model.C_P
    theta = np.asarray(theta, dtype=float)
    rng = stream(seed)
    rows = []
    obs = model.sample(theta, n * m_sims, rng).reshape(m_sims, n, -1)
    if statistic == "psi":
        stats = np.abs(model.psi(obs).mean(axis=1) - model.psi_mean(theta))
        for delta in delta_grid:
            bound = 2.0 * math.exp(
                -n * min(delta**2 / (4.0 * cp), delta / (2.0 * math.sqrt(cp)))
            )
            freq = float(np.mean(stats >= delta))
            slack = _binom_slack(min(bound, 1.0), m_sims)
            rows.append(BoundCheckRow(delta, freq, bound, slack, freq <= bound + slack))
    elif statistic == "score":
        L = model.per_obs_L
        d = model.d
        grads = model.score(obs, theta)  # (m_sims, n, d)
        stats = np.linalg.norm(grads.mean(axis=1), axis=-1)
        for delta in delta_grid:
            bound = 2.0 * d * math.exp(
                -n
                * min(
                    delta**2 / (4.0 * L**2 * cp * d),
                    delta / (2.0 * L * math.sqrt(cp * d)),
                )
            )
            freq = float(np.mean(stats >= delta))
            slack = _binom_slack(min(bound, 1.0), m_sims)
            rows.append(BoundCheckRow(delta, freq, bound, slack, freq <= bound + slack))
    else:
        raise ParameterError(f"unknown statistic {statistic!r}")
    return rows


@dataclass(frozen=True)
class SeparationMap:
    """c(Delta) = b1 Delta^alpha_c for Delta <= 1, b2 (log Delta + 1) beyond."""

    b1: float = 1.0
    b2: float = 1.0
    alpha_c: float = 1.0

    def __call__(self, delta: float) -> float:
        if delta < 0:
            raise ParameterError("separation argument must be nonnegative")
        if delta <= 1.0:
            return self.b1 * delta**self.alpha_c
        return self.b2 * (math.log(delta) + 1.0)


@dataclass(frozen=True)
class TestPhiReport:
    type1_frequency: float
    type2_frequency: float
    bound: float
    slack: float
    passed: bool
    c_at_r: float


def run_test_phi(
    model,
    theta_star,
    theta_alt,
    n: int,
    r_n: float,
    c_map: SeparationMap,
    m_sims: int,
    seed: int,
    per_coordinate: bool = False,
) -> TestPhiReport:
    """Error frequencies of the threshold test on the averaged statistic.

    The test rejects when |mean Psi(xi_i) - pi_{theta*}(Psi)| >= c(r_n)/2;
    both error frequencies are compared with
    2 exp(-n (c(r_n)^2/(16 C_P) ^ c(r_n)/(4 sqrt(C_P)))) plus binomial slack.

    With ``per_coordinate`` the scalar statistic is replaced by the maximal
    coordinate deviation for location models, the bound gains the union
    factor d, and the alternative must be separated coordinate-wise:
    max_j |theta_j - theta*_j| >= r_n.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    theta_alt = np.asarray(theta_alt, dtype=float)
    if per_coordinate:
        sep = float(np.max(np.abs(theta_alt - theta_star)))
    else:
        sep = float(np.linalg.norm(theta_alt - theta_star))
    if sep < r_n * (1.0 - 1e-12):
        raise ParameterError(
            f"alternative at distance {sep} is closer than the separation radius {r_n}"
        )
    if model.C_P is None:
        raise ParameterError("model carries no exact Poincare constant")
    cp = model.C_P
    c_r = c_map(r_n)
    threshold = c_r / 2.0
    rng = stream(seed)
    d = model.d

    def statistic(obs, center_theta):
        if per_coordinate:
            centers = np.asarray(center_theta, dtype=float)
            return np.max(np.abs(obs.mean(axis=1) - centers), axis=-1)
        return np.abs(model.psi(obs).mean(axis=1) - model.psi_mean(center_theta))

    obs0 = model.sample(theta_star, n * m_sims, rng).reshape(m_sims, n, -1)
    type1 = float(np.mean(statistic(obs0, theta_star) >= threshold))
    obs1 = model.sample(theta_alt, n * m_sims, rng).reshape(m_sims, n, -1)
    type2 = float(np.mean(statistic(obs1, theta_star) < threshold))
    factor = 2.0 * d if per_coordinate else 2.0
    bound = factor * math.exp(-n * min(c_r**2 / (16.0 * cp), c_r / (4.0 * math.sqrt(cp))))
    slack = _binom_slack(min(bound, 1.0), m_sims)
    passed = (type1 <= bound + slack) and (type2 <= bound + slack)
    return TestPhiReport(type1, type2, bound, slack, passed, c_r)


@dataclass(frozen=True)
class MomentReport:
    p_grid: tuple
    sup_running_mean: dict  # p -> sup over checkpoints of the running mean
    first_decile_max: dict
    implied_c_p: dict
    exp_sup: float
    exp_first_decile_max: float
    passed: bool


def moment_check(
    pot: Potential,
    cfg: ChainConfig,
    p_grid: Sequence[float] = (1.0, 2.0, 4.0, 9.0),
    a: float = 1.0 / 16.0,
    checkpoints: int = 100,
) -> MomentReport:
    """Long-run stability of W^p and exp(a W) running means along one chain.

    Requires the moment clamp gamma <= 1/(4dL+1).  Passes when no
    checkpointed running mean exceeds ten times its maximum over the first
    decile of checkpoints.  Also reports the implied moment constants
    sup-mean / (W^p(x0) + Upsilon^p).
    """
    if any(p <= 0 or p > 9 for p in p_grid):
        raise ParameterError("moment exponents must lie in (0, 9]")
    if not (0 < a <= 1.0 / 16.0):
        raise ParameterError("exponential exponent must lie in (0, 1/16]")
    if cfg.gamma > moment_clamp(pot) * (1.0 + 1e-12):
        raise ParameterError("moment_check requires gamma <= 1/(4dL+1)")

    # stream the chain manually so all powers share one trajectory
    from .rng import stream as _stream

    rng = _stream(cfg.seed)
    x = np.asarray(cfg.x0, dtype=float).copy()
    n = cfg.n_steps
    every = max(1, n // checkpoints)
    sums = {p: 0.0 for p in p_grid}
    esum = 0.0
    logs = {p: [] for p in p_grid}
    elog = []
    sqrt2g = math.sqrt(2.0 * cfg.gamma)
    block = 8192
    step = 0
    while step < n:
        todo = min(block, n - step)
        noise = rng.standard_normal((todo, pot.dim))
        for j in range(todo):
            w = float(pot.value(x) + pot.offset)
            if not np.isfinite(w):
                raise ExperimentError(f"potential blew up at step {step}")
            for p in p_grid:
                sums[p] += w**p
            esum += math.exp(a * w)
            if step % every == 0 or step == n - 1:
                t = step * cfg.gamma
                for p in p_grid:
                    logs[p].append((t, sums[p] / (step + 1)))
                elog.append((t, esum / (step + 1)))
            x = x - cfg.gamma * pot.grad(x) + sqrt2g * noise[j]
            step += 1

    n_ck = len(elog)
    decile = max(1, n_ck // 10)
    sup_mean, first_max, implied = {}, {}, {}
    prof = pot.profile
    if isinstance(prof, WeaklyConvexKL):
        ups = compute_upsilon(prof, pot.smoothness.L, pot.dim).value
    elif isinstance(prof, StronglyConvex):
        flat = WeaklyConvexKL(c1=prof.rho, c2=pot.smoothness.L, q=0.0, r=0.0)
        ups = compute_upsilon(flat, pot.smoothness.L, pot.dim).value
    else:
        ups = 1.0
    w0 = float(pot.value(np.asarray(cfg.x0, dtype=float)) + pot.offset)
    passed = True
    for p in p_grid:
        vals = np.array([v for _, v in logs[p]])
        sup_mean[p] = float(vals.max())
        first_max[p] = float(vals[:decile].max())
        implied[p] = sup_mean[p] / (w0**p + ups**p)
        if sup_mean[p] > 10.0 * first_max[p]:
            passed = False
    evals = np.array([v for _, v in elog])
    exp_sup = float(evals.max())
    exp_first = float(evals[:decile].max())
    if exp_sup > 10.0 * exp_first:
        passed = False
    return MomentReport(
        p_grid=tuple(p_grid),
        sup_running_mean=sup_mean,
        first_decile_max=first_max,
        implied_c_p=implied,
        exp_sup=exp_sup,
        exp_first_decile_max=exp_first,
        passed=passed,
    )
