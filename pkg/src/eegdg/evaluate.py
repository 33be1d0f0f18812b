"""Leave-one-subject-out evaluation, metrics, significance tests and the
perturbation / cross-subject diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as st

from . import baselines, dg, numcore
from .errors import ConfigurationError, UndefinedCorrelationError
from .sigproc import TrialTable
from .util import substream

ALGORITHMS = ("knn", "rr", "agg", "fw-agg", "et", "fwet")


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError("pred and truth must be equal-length and nonempty")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def pearson_cc(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.size < 2:
        raise ValueError("pred and truth must be equal-length with at least 2 points")
    ps = pred.std()
    ts = truth.std()
    if ps == 0 or ts == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return float(np.mean((pred - pred.mean()) * (truth - truth.mean())) / (ps * ts))


def dunn_fdr(score_matrix: np.ndarray):
    """Dunn's pairwise multiple-comparison z-tests with BH (FDR) adjustment.

    ``score_matrix`` is algorithms x samples. All scores are pooled and
    mid-ranked (tie-corrected); the pairwise z statistic compares mean ranks.
    Returns (adjusted_p, raw_p, z), each a symmetric algorithms x algorithms
    matrix with 1 (or 0 for z) on the diagonal.
    """
    scores = np.atleast_2d(np.asarray(score_matrix, dtype=np.float64))
    k, n = scores.shape
    if k < 2 or n < 2:
        raise ValueError("need at least 2 algorithms with at least 2 samples each")
    pooled = scores.ravel()
    total = pooled.size
    ranks = st.rankdata(pooled).reshape(k, n)
    mean_ranks = ranks.mean(axis=1)
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts**3 - counts))
    var_core = total * (total + 1) / 12.0 - tie_term / (12.0 * (total - 1))
    z = np.zeros((k, k))
    raw_p = np.ones((k, k))
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    for i, j in pairs:
        se = np.sqrt(var_core * (1.0 / n + 1.0 / n))
        if se == 0:
            zij = 0.0
        else:
            zij = (mean_ranks[i] - mean_ranks[j]) / se
        z[i, j] = z[j, i] = zij
        raw_p[i, j] = raw_p[j, i] = 2.0 * st.norm.sf(abs(zij))
    flat = np.array([raw_p[i, j] for i, j in pairs])
    adj_flat = bh_adjust(flat)
    adj = np.ones((k, k))
    for (i, j), p in zip(pairs, adj_flat):
        adj[i, j] = adj[j, i] = p
    return adj, raw_p, z


def bh_adjust(p_values: np.ndarray) -> np.ndarray:
    """Benjamini-Hochberg step-up adjustment, clipped to (0, 1]."""
    p = np.asarray(p_values, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="stable")
    adj = np.empty(m)
    running = 1.0
    for rank_from_end, idx in enumerate(order[::-1]):
        rank = m - rank_from_end
        running = min(running, p[idx] * m / rank)
        adj[idx] = running
    return np.clip(adj, 0.0, 1.0)


@dataclass
class LosoCell:
    algorithm: str
    target_subject: str
    repeat: int
    rmse: float | None
    cc: float | None
    failed: bool = False
    error: str = ""


@dataclass
class LosoReport:
    cells: list[LosoCell]
    repeats: int
    algorithms: list[str]
    subjects: list[str]
    significance: dict = field(default_factory=dict)

    def matrix(self, algorithm: str, metric: str = "rmse") -> np.ndarray:
        """subjects x repeats matrix of one metric (nan for failed cells)."""
        out = np.full((len(self.subjects), self.repeats), np.nan)
        for c in self.cells:
            if c.algorithm == algorithm and not c.failed:
                out[self.subjects.index(c.target_subject), c.repeat] = getattr(c, metric)
        return out

    def mean(self, algorithm: str, metric: str = "rmse") -> float:
        return float(np.nanmean(self.matrix(algorithm, metric)))


def _fit_predict(algorithm: str, train: list[TrialTable], target: TrialTable,
                 cfg: dg.TrainConfig, seed: int):
    X = target.features
    if algorithm == "knn":
        model = baselines.KnnModel(
            np.concatenate([t.features for t in train]),
            np.concatenate([t.labels for t in train]), k=5)
        return baselines.knn_predict(model, X), None
    if algorithm == "rr":
        model = baselines.ridge_fit(
            np.concatenate([t.features for t in train]),
            np.concatenate([t.labels for t in train]), alpha_l2=0.1)
        return baselines.ridge_predict(model, X), None
    rng = np.random.default_rng(seed)
    result = dg.fit(algorithm, train, cfg, rng=rng)
    return dg.predict(result.model, X), result


def loso_cell(algorithm: str, data: list[TrialTable], target_subject: str,
              repeat: int, cfg: dg.TrainConfig, root_seed: int,
              artifacts_dir=None) -> LosoCell:
    """Train on all subjects but the target, score the target's full session.

    With ``artifacts_dir`` set, successful neural cells also write their
    checkpoint and training trace there.
    """
    train = [t for t in data if t.subject_id != target_subject]
    target = [t for t in data if t.subject_id == target_subject][0]
    assert all(t.subject_id != target_subject for t in train)
    seed = substream(root_seed, "loso", algorithm, target_subject, repeat)
    seed = int(seed.integers(0, 2**63 - 1))
    try:
        pred, result = _fit_predict(algorithm, train, target, cfg, seed)
        if result is not None and artifacts_dir is not None:
            from . import dataio  # deferred: dataio imports this module

            stem = f"{algorithm}_{target_subject}_r{repeat}"
            dataio.save_checkpoint(
                artifacts_dir / f"ckpt_{stem}.json", result.model,
                seed_lineage=[root_seed, "loso", algorithm, target_subject, repeat],
                variant=algorithm)
            dataio.save_trace(artifacts_dir / f"trace_{stem}.jsonl", result.trace)
        return LosoCell(algorithm, target_subject, repeat,
                        rmse(pred, target.labels), pearson_cc(pred, target.labels))
    except Exception as exc:  # record the failure, never impute
        return LosoCell(algorithm, target_subject, repeat, None, None,
                        failed=True, error=f"{type(exc).__name__}: {exc}")


def loso(algorithms: list[str], data: list[TrialTable], cfg: dg.TrainConfig,
         repeats: int = 5, root_seed: int = 0, workers: int = 1,
         artifacts_dir=None) -> LosoReport:
    """Leave-one-subject-out evaluation of each algorithm, repeated with
    distinct per-cell seeds; Dunn/FDR significance on per-subject mean RMSE/CC."""
    if len(data) < 3:
        raise ConfigurationError("LOSO needs at least 3 subjects")
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
    data = sorted(data, key=lambda t: t.subject_id)
    subjects = [t.subject_id for t in data]
    jobs = [(a, s, r) for a in algorithms for s in subjects for r in range(repeats)]
    job_args = [(a, data, s, r, cfg, root_seed, artifacts_dir) for a, s, r in jobs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_loso_cell_job, job_args))
    else:
        cells = [loso_cell(*args) for args in job_args]
    report = LosoReport(cells=cells, repeats=repeats, algorithms=list(algorithms),
                        subjects=subjects)
    if len(algorithms) >= 2 and len(subjects) >= 2:
        for metric in ("rmse", "cc"):
            per_subject = np.stack([np.nanmean(report.matrix(a, metric), axis=1)
                                    for a in algorithms])
            if np.all(np.isfinite(per_subject)):
                adj, raw, _ = dunn_fdr(per_subject)
                report.significance[metric] = {"adjusted_p": adj, "raw_p": raw}
    return report


def _loso_cell_job(args):
    return loso_cell(*args)


@dataclass
class PerturbationCurve:
    sigmas: np.ndarray
    rmse: np.ndarray  # mean over draws, per sigma
    cc: np.ndarray


def perturb_analysis(model: dg.SharedModel, test_X: np.ndarray, test_y: np.ndarray,
                     sigmas, n_draws: int = 20, root_seed: int = 0) -> PerturbationCurve:
    """Add i.i.d. Gaussian noise of each sigma to every parameter (w, theta,
    psi) and average the degraded RMSE/CC over seeded draws."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas < 0) or np.any(np.diff(sigmas) < 0):
        raise ValueError("sigma levels must be nonnegative and nondecreasing")
    out_rmse = np.empty(len(sigmas))
    out_cc = np.empty(len(sigmas))
    for si, sigma in enumerate(sigmas):
        vals_r, vals_c = [], []
        draws = 1 if sigma == 0 else n_draws
        for d in range(draws):
            rng = substream(root_seed, "perturb", si, d)
            noisy = model.copy()
            for p in noisy.params():
                p += rng.normal(0.0, sigma, size=p.shape)
            pred = dg.predict(noisy, test_X)
            vals_r.append(rmse(pred, test_y))
            try:
                vals_c.append(pearson_cc(pred, test_y))
            except UndefinedCorrelationError:
                vals_c.append(np.nan)
        out_rmse[si] = np.mean(vals_r)
        out_cc[si] = np.nanmean(vals_c) if np.any(np.isfinite(vals_c)) else np.nan
    return PerturbationCurve(sigmas=sigmas, rmse=out_rmse, cc=out_cc)


def cross_apply(shared_theta, fw_w, domain_psis: dict, data: list[TrialTable]):
    """For each subject s, average RMSE/CC of foreign regressors psi_j (j != s)
    applied to the shared feature transform of s's data.

    Returns {subject: (mean_rmse, mean_cc)}.
    """
    if len(data) < 2:
        raise ConfigurationError("cross-subject exchange needs at least 2 subjects")
    results = {}
    for table in data:
        xt = dg.apply_fw(fw_w, table.features) if fw_w is not None else table.features
        h, _ = numcore.forward(shared_theta, xt)
        rs, cs = [], []
        for sid, psi_j in sorted(domain_psis.items()):
            if sid == table.subject_id:
                continue
            pred, _ = numcore.forward(psi_j, h)
            pred = pred[:, 0]
            rs.append(rmse(pred, table.labels))
            try:
                cs.append(pearson_cc(pred, table.labels))
            except UndefinedCorrelationError:
                cs.append(np.nan)
        results[table.subject_id] = (float(np.mean(rs)), float(np.nanmean(cs)))
    return results


def val_test_gap(trace: list[dict], test_rmse: float):
    """(best validation RMSE, test RMSE, gap = test - best val)."""
    if not trace:
        raise ValueError("empty training trace")
    best_val = min(rec["val_rmse"] for rec in trace)
    return best_val, test_rmse, test_rmse - best_val
