"""One-time validation gate for the AR(1) Cesaro closed forms.

Runs 10^6 replicate chains of the unit-curvature quadratic potential at
gamma = 0.1, N = 1000, x0 = 2, and compares the empirical mean/variance of
the Cesaro estimator with the closed forms frozen in
cesaro_lmc.oracle.ou_cesaro_moments.  The result is recorded in
ou_cesaro_validation.json next to this script.

Usage: python validation/run_ou_validation.py
"""

import json
import math
import time
from pathlib import Path

import numpy as np

from cesaro_lmc.oracle import ou_cesaro_moments
from cesaro_lmc.potentials import builtin_gaussian_location
from cesaro_lmc.sampler import ChainConfig, replicate_runs

RHO, GAMMA, N_STEPS, X0 = 1.0, 0.1, 1000, 2.0
M_TOTAL, CHUNK, BASE_SEED = 10**6, 50_000, 987654321


def main():
    pot = builtin_gaussian_location(1, 0.0, RHO)
    cfg = ChainConfig(gamma=GAMMA, n_steps=N_STEPS, x0=[X0], seed=0)
    t0 = time.time()
    sums = 0.0
    sumsq = 0.0
    for start in range(0, M_TOTAL, CHUNK):
        runs = replicate_runs(pot, cfg, CHUNK, BASE_SEED, index_offset=start)
        ces = np.array([r.cesaro[0] for r in runs])
        sums += ces.sum()
        sumsq += np.sum(ces**2)
        print(f"  {start + CHUNK}/{M_TOTAL} replicates ({time.time() - t0:.0f}s)")
    emp_mean = sums / M_TOTAL
    emp_var = (sumsq - M_TOTAL * emp_mean**2) / (M_TOTAL - 1)
    mean, var = ou_cesaro_moments(RHO, 0.0, GAMMA, N_STEPS, X0)
    se_mean = math.sqrt(var / M_TOTAL)
    se_var = var * math.sqrt(2.0 / (M_TOTAL - 1))
    record = {
        "settings": {
            "rho": RHO, "gamma": GAMMA, "n_steps": N_STEPS, "x0": X0,
            "replicates": M_TOTAL, "base_seed": BASE_SEED,
        },
        "closed_form": {"mean": mean, "variance": var},
        "empirical": {"mean": emp_mean, "variance": emp_var},
        "z_scores": {
            "mean": (emp_mean - mean) / se_mean,
            "variance": (emp_var - var) / se_var,
        },
        "gate": "both |z| <= 3",
        "passed": bool(abs(emp_mean - mean) <= 3 * se_mean and abs(emp_var - var) <= 3 * se_var),
        "elapsed_seconds": round(time.time() - t0, 1),
    }
    out = Path(__file__).parent / "ou_cesaro_validation.json"
    out.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(json.dumps(record, indent=2, sort_keys=True))
    assert record["passed"]


if __name__ == "__main__":
    main()
