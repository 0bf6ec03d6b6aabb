"""Monte-Carlo replication of the estimation-error experiment.

For every (k, n, s) cell and series length T, replications draw fresh noise
from fixed true parameters. With several designs, each design is an
independent draw of the true parameters and the summary pools them. Every
replication fits QMLE, the bias-corrected alternating minimization, the
stacked VAR and the matrix AR, and scores

    c_error   ||C_hat - C||_F / ||C||_F          (qmle, bc)
    fpr, tpr  support recovery of S              (qmle, bc)
    pi_error  ||Pi_hat - Pi||_F / ||Pi||_F       (svar, mar, qmle, bc)

Means and sample standard deviations are reported next to the stored
reference values, with pass/fail columns where an acceptance band exists.
"""
import dataclasses
import logging
import math
import os
from typing import List

import numpy as np
import pandas as pd

from sigmar import baselines
from sigmar import distribute
from sigmar import evaluate
from sigmar import model
from sigmar import simulate
from sigmar.errors import SigmarError

logger = logging.getLogger(__name__)

GRID_CELLS = [(3, 4, 10), (4, 6, 20), (5, 10, 30)]
GRID_T = [100, 500, 1000, 2000]
DESK_CELLS = [(3, 4, 10)]
DESK_T = [100, 500, 2000]

# Cells with more failed replications than this fraction are flagged.
MAX_FAILURE_RATE = 0.10

QUANTITIES = {
    "c_error": ("qmle", "bc"),
    "fpr": ("qmle", "bc"),
    "tpr": ("qmle", "bc"),
    "pi_error": ("svar", "mar", "qmle", "bc"),
}


def _ref(c_qmle, c_bc, fpr_qmle, fpr_bc, tpr_qmle, tpr_bc, pi_svar, pi_mar, pi_qmle, pi_bc):
    return {
        ("c_error", "qmle"): c_qmle, ("c_error", "bc"): c_bc,
        ("fpr", "qmle"): fpr_qmle, ("fpr", "bc"): fpr_bc,
        ("tpr", "qmle"): tpr_qmle, ("tpr", "bc"): tpr_bc,
        ("pi_error", "svar"): pi_svar, ("pi_error", "mar"): pi_mar,
        ("pi_error", "qmle"): pi_qmle, ("pi_error", "bc"): pi_bc,
    }


# Reference means and standard deviations (200 replications) per (k, n, T).
REFERENCE = {
    (3, 4, 100): _ref((0.269, 0.110), (0.701, 0.347), (0.197, 0.041), (0.157, 0.032),
                      (0.698, 0.102), (0.686, 0.098), (0.335, 0.036), (0.210, 0.010),
                      (0.138, 0.016), (0.153, 0.051)),
    (3, 4, 500): _ref((0.165, 0.058), (0.311, 0.116), (0.121, 0.037), (0.058, 0.019),
                      (0.792, 0.071), (0.787, 0.057), (0.141, 0.014), (0.197, 0.004),
                      (0.089, 0.008), (0.081, 0.007)),
    (3, 4, 1000): _ref((0.192, 0.083), (0.228, 0.071), (0.152, 0.033), (0.060, 0.019),
                       (0.845, 0.053), (0.829, 0.049), (0.099, 0.010), (0.195, 0.003),
                       (0.079, 0.008), (0.065, 0.005)),
    (3, 4, 2000): _ref((0.157, 0.024), (0.187, 0.044), (0.145, 0.030), (0.050, 0.018),
                       (0.846, 0.050), (0.826, 0.044), (0.069, 0.006), (0.195, 0.002),
                       (0.073, 0.004), (0.059, 0.004)),
    (4, 6, 100): _ref((0.381, 0.074), (0.314, 0.094), (0.210, 0.018), (0.178, 0.018),
                      (0.684, 0.079), (0.704, 0.081), (0.594, 0.041), (0.602, 0.023),
                      (0.309, 0.035), (0.241, 0.035)),
    (4, 6, 500): _ref((0.368, 0.075), (0.151, 0.040), (0.198, 0.015), (0.138, 0.014),
                      (0.933, 0.041), (0.991, 0.018), (0.232, 0.014), (0.583, 0.007),
                      (0.162, 0.012), (0.114, 0.010)),
    (4, 6, 1000): _ref((0.296, 0.048), (0.119, 0.031), (0.190, 0.011), (0.075, 0.011),
                       (0.988, 0.018), (0.999, 0.005), (0.162, 0.009), (0.580, 0.005),
                       (0.144, 0.039), (0.090, 0.008)),
    (4, 6, 2000): _ref((0.287, 0.036), (0.102, 0.023), (0.191, 0.011), (0.039, 0.008),
                       (0.997, 0.010), (1.000, 0.002), (0.114, 0.007), (0.580, 0.004),
                       (0.125, 0.030), (0.078, 0.005)),
    (5, 10, 100): _ref((0.483, 0.063), (0.381, 0.103), (0.097, 0.007), (0.149, 0.008),
                       (0.677, 0.088), (0.739, 0.077), (0.927, 0.039), (0.379, 0.010),
                       (0.236, 0.022), (0.219, 0.028)),
    (5, 10, 500): _ref((0.422, 0.024), (0.167, 0.052), (0.064, 0.005), (0.058, 0.005),
                       (0.991, 0.017), (0.993, 0.014), (0.301, 0.008), (0.355, 0.004),
                       (0.139, 0.009), (0.089, 0.010)),
    (5, 10, 1000): _ref((0.410, 0.045), (0.111, 0.023), (0.082, 0.005), (0.067, 0.005),
                        (1.000, 0.000), (1.000, 0.000), (0.207, 0.006), (0.352, 0.003),
                        (0.123, 0.013), (0.062, 0.004)),
    (5, 10, 2000): _ref((0.416, 0.021), (0.080, 0.018), (0.077, 0.005), (0.050, 0.004),
                        (1.000, 0.000), (1.000, 0.000), (0.144, 0.004), (0.351, 0.002),
                        (0.119, 0.007), (0.044, 0.003)),
}

# Acceptance bands (lower, upper) on replication means, widened for 50 replications.
ACCEPTANCE = {
    (3, 4, 2000, "pi_error", "bc"): (0.047, 0.071),
    (3, 4, 2000, "pi_error", "mar"): (0.185, 0.205),
    (3, 4, 2000, "c_error", "qmle"): (0.09, 0.23),
    (3, 4, 2000, "tpr", "bc"): (0.70, 1.0),
    (3, 4, 2000, "fpr", "bc"): (0.0, 0.12),
    (5, 10, 1000, "tpr", "bc"): (0.95, 1.0),
}


@dataclasses.dataclass
class ReplicationTask:
    """One replication; picklable so it can be shipped to a worker."""
    k: int
    n: int
    s: int
    T: int
    replication: int
    seed: int
    options: evaluate.MethodOptions
    burn_in: int = 200
    design: int = 0


@dataclasses.dataclass
class ReplicationResult:
    k: int
    n: int
    T: int
    replication: int
    metrics: dict
    errors: List[str] = dataclasses.field(default_factory=list)
    design: int = 0

    @property
    def failed(self):
        return bool(self.errors)


def true_model(k, n, s, seed, design=0):
    """Network and parameters shared by every replication of a (cell, design).

    Design 0 is drawn from ``seed`` itself; later designs use their own stream.
    """
    if design:
        seed = (seed, simulate.STREAM_DESIGNS, design)
    W = simulate.gen_weight(n, seed)
    params = simulate.gen_coefficients(simulate.DgpSpec(k=k, n=n, s=s, seed=seed), W)
    return W, params


def _score_sigmar(fit, truth, Pi_true, W, S_hat):
    support = evaluate.support_metrics(S_hat, truth.S)
    return {
        "c_error": evaluate.relative_error(fit.params.C, truth.C),
        "pi_error": evaluate.relative_error(fit.transition(W), Pi_true),
        "fpr": np.nan if support.fpr is None else support.fpr,
        "tpr": np.nan if support.tpr is None else support.tpr,
    }


def run_replication(task):
    """Simulates one panel and scores every method on it."""
    W, truth = true_model(task.k, task.n, task.s, task.seed, task.design)
    Pi_true = model.reduced_form(truth, W).Pi
    data = simulate.simulate_series(truth, W, task.T, burn_in=task.burn_in,
                                    seed=(task.seed, simulate.STREAM_NOISE, task.replication))
    metrics = {}
    errors = []
    for method in ("qmle", "bc"):
        try:
            fit = evaluate.fit_sigmar(method, data, W, task.options)
            S_hat = fit.projection.S if fit.projection is not None else fit.params.S
            for quantity, value in _score_sigmar(fit, truth, Pi_true, W, S_hat).items():
                metrics[(quantity, method)] = value
        except (SigmarError, np.linalg.LinAlgError) as err:
            errors.append(f"{method}: {err}")
    for method, fit_fn in (("svar", baselines.fit_svar), ("mar", baselines.fit_mar)):
        try:
            forecaster = fit_fn(data)
            metrics[("pi_error", method)] = evaluate.relative_error(forecaster.transition, Pi_true)
        except (SigmarError, np.linalg.LinAlgError) as err:
            errors.append(f"{method}: {err}")
    for message in errors:
        logger.warning(f"cell ({task.k},{task.n}) T={task.T} replication {task.replication} "
                       f"failed for {message}")
    return ReplicationResult(task.k, task.n, task.T, task.replication, metrics, errors,
                             design=task.design)


def make_tasks(cells, T_values, reps, seed=0, options=None, designs=1):
    """Tasks for every (cell, T, design, replication); replications are numbered across designs."""
    options = options or evaluate.MethodOptions(seed=seed)
    return [ReplicationTask(k, n, s, T, design * reps + rep, seed, options, design=design)
            for k, n, s in cells for T in T_values
            for design in range(designs) for rep in range(reps)]


def _band(k, n, T, quantity, method):
    return ACCEPTANCE.get((k, n, T, quantity, method))


def summarize(results):
    """One row per (k, n, T, quantity, method) with mean, sd and references."""
    rows = []
    groups = {}
    for result in results:
        groups.setdefault((result.k, result.n, result.T), []).append(result)
    for (k, n, T), group in groups.items():
        n_failed = sum(r.failed for r in group)
        failure_rate = n_failed / len(group)
        flagged = failure_rate > MAX_FAILURE_RATE
        if flagged:
            logger.warning(f"cell ({k},{n}) T={T}: {n_failed} of {len(group)} replications failed")
        reference = REFERENCE.get((k, n, T), {})
        for quantity, methods in QUANTITIES.items():
            for method in methods:
                values = np.array([r.metrics.get((quantity, method), np.nan) for r in group])
                values = values[np.isfinite(values)]
                mean = float(values.mean()) if values.size else math.nan
                sd = float(values.std(ddof=1)) if values.size > 1 else math.nan
                ref_mean, ref_sd = reference.get((quantity, method), (math.nan, math.nan))
                band = _band(k, n, T, quantity, method)
                passed = None
                if band is not None:
                    passed = bool(values.size and band[0] <= mean <= band[1])
                rows.append({
                    "k": k, "n": n, "T": T, "quantity": quantity, "method": method,
                    "mean": mean, "sd": sd, "n_ok": int(values.size), "n_reps": len(group),
                    "n_designs": len({r.design for r in group}),
                    "failure_rate": failure_rate, "flagged": flagged,
                    "reference_mean": ref_mean, "reference_sd": ref_sd,
                    "band_low": band[0] if band else math.nan,
                    "band_high": band[1] if band else math.nan,
                    "passed": passed,
                })
    return pd.DataFrame(rows)


def table_layout(summary):
    """Wide 'mean(sd)' table: one row per (k, n, T), one column per quantity and method."""
    cells = summary.assign(
        column=summary["quantity"] + "_" + summary["method"],
        value=[f"{m:.3f}({s:.3f})" for m, s in zip(summary["mean"], summary["sd"])])
    order = [f"{q}_{m}" for q, methods in QUANTITIES.items() for m in methods]
    wide = cells.pivot(index=["k", "n", "T"], columns="column", values="value")
    return wide[order].reset_index()


def _mean_of(summary, k, n, T, quantity, method):
    row = summary[(summary.k == k) & (summary.n == n) & (summary["T"] == T)
                  & (summary.quantity == quantity) & (summary.method == method)]
    return float(row["mean"].iloc[0]) if len(row) else None


def trend_checks(summary, k=3, n=4):
    """Large-sample signatures: MAR error flat in T, BC error shrinking.

    Returns a list of dicts (cell, check, value, threshold, passed); checks whose
    T values were not run are skipped.
    """
    checks = []
    mar_500 = _mean_of(summary, k, n, 500, "pi_error", "mar")
    mar_2000 = _mean_of(summary, k, n, 2000, "pi_error", "mar")
    if mar_500 is not None and mar_2000 is not None:
        gap = abs(mar_500 - mar_2000)
        checks.append({"cell": f"{k}x{n}", "check": "mar_pi_error_gap_500_2000", "value": gap, "threshold": 0.02,
                       "passed": bool(gap < 0.02)})
    bc_100 = _mean_of(summary, k, n, 100, "pi_error", "bc")
    bc_2000 = _mean_of(summary, k, n, 2000, "pi_error", "bc")
    if bc_100 is not None and bc_2000 is not None:
        ratio = bc_2000 / bc_100
        checks.append({"cell": f"{k}x{n}", "check": "bc_pi_error_ratio_2000_100", "value": ratio, "threshold": 0.5,
                       "passed": bool(ratio < 0.5)})
    return checks


@dataclasses.dataclass
class ReplicationReport:
    summary: pd.DataFrame
    layout: pd.DataFrame
    trends: List[dict]
    results: List[ReplicationResult]

    @property
    def all_passed(self):
        bands = [p for p in self.summary["passed"] if p is not None]
        return all(bands) and all(c["passed"] for c in self.trends)

    def write(self, out_dir, exp_id):
        """Writes the summary, layout and trend CSVs; returns their paths."""
        paths = {
            "summary": os.path.join(out_dir, f"table1_{exp_id}.csv"),
            "layout": os.path.join(out_dir, f"table1_{exp_id}_layout.csv"),
            "trends": os.path.join(out_dir, f"table1_{exp_id}_trends.csv"),
        }
        self.summary.to_csv(paths["summary"], index=False, float_format="%.10g")
        self.layout.to_csv(paths["layout"], index=False)
        pd.DataFrame(self.trends, columns=["cell", "check", "value", "threshold", "passed"]).to_csv(
            paths["trends"], index=False, float_format="%.10g")
        return paths


def replicate_table1(cells=None, T_values=None, reps=50, seed=0, jobs=1, options=None, designs=1):
    """Runs the replication grid.

    Args:
        cells (list): (k, n, s) cells; DESK_CELLS by default.
        T_values (list): Series lengths; DESK_T by default.
        reps (int): Replications per (cell, T).
        seed (int): Master seed.
        jobs (int): Worker processes.
        options (MethodOptions): Estimator settings.
        designs (int): Independent true-parameter draws per cell, each with
            ``reps`` replications.

    Returns:
        ReplicationReport: Summary table, layout and trend checks.
    """
    cells = DESK_CELLS if cells is None else cells
    T_values = DESK_T if T_values is None else T_values
    tasks = make_tasks(cells, T_values, reps, seed, options, designs)
    logger.info(f"running {len(tasks)} replications over {len(cells)} cells, {designs} designs "
                f"and T={T_values}")
    results = distribute.run_replications(run_replication, tasks, jobs)
    summary = summarize(results)
    trends = [check for k, n, _ in cells for check in trend_checks(summary, k, n)]
    return ReplicationReport(summary, table_layout(summary), trends, results)
