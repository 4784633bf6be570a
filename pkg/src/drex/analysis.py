"""Post-training analyses over a frozen checkpoint.

Branch ablation zeroes a branch's *projected* embedding (attention is
recomputed in response, and the residual path keeps the zeroed term);
per-dimension and per-block ablations zero *raw* feature entries before
projection. Significance uses a paired prediction-swap permutation test,
families of tests get Benjamini-Hochberg FDR correction, and dimension
importance is mean |gradient x activation| with a bootstrap skewness
test.

Everything here is read-only over the checkpoint; sweeps are
data-parallel across dimensions.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .exceptions import UndefinedCorrelationError
from .features import DatasetManifest, require_matching_dims
from .metrics import MetricReport, compute_report, pearson
from .model import DrexParameters, input_gradients, predict_batch

_PRED_CHUNK = 1024
_GRAD_CHUNK = 256
DEFAULT_N_PERM = 10_000
DEFAULT_N_BOOT = 10_000


@dataclass
class AblationResult:
    """Metric deltas and significance for one named ablation."""

    name: str
    baseline: MetricReport
    ablated: MetricReport
    delta_r: float
    delta_rho: float
    p_value: float
    fdr_significant: bool | None = None


@dataclass
class ImportanceProfile:
    """Per-dimension |grad x activation| scores and their skewness."""

    importance: np.ndarray
    skewness: float
    skewness_p: float


def _chunked_preds(
    params: DrexParameters,
    dino: np.ndarray,
    resnet: np.ndarray,
    zero_branch: str | None = None,
) -> np.ndarray:
    n = dino.shape[0]
    preds = np.empty(n, dtype=np.float64)
    for start in range(0, n, _PRED_CHUNK):
        stop = min(start + _PRED_CHUNK, n)
        p, _ = predict_batch(
            params, dino[start:stop], resnet[start:stop], zero_branch=zero_branch
        )
        preds[start:stop] = p
    return preds


def _load_eval(checkpoint: Checkpoint, eval_set: DatasetManifest, use_ema: bool | None):
    params = checkpoint.eval_params(use_ema)
    require_matching_dims(eval_set, params.config.dino_dim, params.config.resnet_dim)
    if len(eval_set) == 0:
        raise ValueError("evaluation manifest is empty")
    return params, eval_set.dino_matrix(), eval_set.resnet_matrix(), eval_set.scores()


def _result(
    name: str,
    scores: np.ndarray,
    base_preds: np.ndarray,
    abl_preds: np.ndarray,
    n_perm: int,
    seed,
) -> AblationResult:
    baseline = compute_report(scores, base_preds)
    ablated = compute_report(scores, abl_preds)
    p = permutation_test_delta(base_preds, abl_preds, scores, n_perm, seed)
    return AblationResult(
        name=name,
        baseline=baseline,
        ablated=ablated,
        delta_r=ablated.pearson_r - baseline.pearson_r,
        delta_rho=ablated.spearman_rho - baseline.spearman_rho,
        p_value=p,
        fdr_significant=None,
    )


def ablate_branch(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    branch: str,
    *,
    n_perm: int = DEFAULT_N_PERM,
    seed=0,
    use_ema: bool | None = None,
) -> AblationResult:
    """Zero one branch's projected embedding and measure the metric drop."""
    if branch not in ("dino", "resnet"):
        raise ValueError(f"unknown branch {branch!r}; expected 'dino' or 'resnet'")
    params, dino, resnet, scores = _load_eval(checkpoint, eval_set, use_ema)
    base = _chunked_preds(params, dino, resnet)
    abl = _chunked_preds(params, dino, resnet, zero_branch=branch)
    return _result(f"branch_{branch}", scores, base, abl, n_perm, seed)


def ablate_dino_dim(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    j: int,
    *,
    n_perm: int = DEFAULT_N_PERM,
    seed=0,
    use_ema: bool | None = None,
) -> AblationResult:
    """Zero raw transformer-feature dimension j before projection."""
    params, dino, resnet, scores = _load_eval(checkpoint, eval_set, use_ema)
    if not 0 <= j < params.config.dino_dim:
        raise IndexError(f"dimension {j} outside 0..{params.config.dino_dim - 1}")
    base = _chunked_preds(params, dino, resnet)
    zeroed = dino.copy()
    zeroed[:, j] = 0.0
    abl = _chunked_preds(params, zeroed, resnet)
    return _result(f"dino_dim_{j}", scores, base, abl, n_perm, [seed, j])


def ablate_resnet_block(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    i: int,
    *,
    n_perm: int = DEFAULT_N_PERM,
    seed=0,
    use_ema: bool | None = None,
) -> AblationResult:
    """Zero one residual stage's whole slice of the raw conv features."""
    params, dino, resnet, scores = _load_eval(checkpoint, eval_set, use_ema)
    block = eval_set.block_slice(i)  # raises IndexError on a bad index
    base = _chunked_preds(params, dino, resnet)
    zeroed = resnet.copy()
    zeroed[:, block] = 0.0
    abl = _chunked_preds(params, dino, zeroed)
    return _result(f"resnet_block_{i}", scores, base, abl, n_perm, [seed, i])


def _resolve_workers(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("DREX_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(threads), 64))


def dino_dimension_sweep(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    *,
    alpha: float = 0.01,
    n_perm: int = DEFAULT_N_PERM,
    seed=0,
    threads: int | None = None,
    use_ema: bool | None = None,
) -> list[AblationResult]:
    """Ablate every transformer dimension, with BH-FDR flags at alpha.

    Each dimension gets its own derived permutation seed, so results do
    not depend on worker scheduling.
    """
    params, dino, resnet, scores = _load_eval(checkpoint, eval_set, use_ema)
    base = _chunked_preds(params, dino, resnet)
    base_report = compute_report(scores, base)

    def one(j: int) -> AblationResult:
        zeroed = dino.copy()
        zeroed[:, j] = 0.0
        abl = _chunked_preds(params, zeroed, resnet)
        ablated = compute_report(scores, abl)
        p = permutation_test_delta(base, abl, scores, n_perm, [seed, j])
        return AblationResult(
            name=f"dino_dim_{j}",
            baseline=base_report,
            ablated=ablated,
            delta_r=ablated.pearson_r - base_report.pearson_r,
            delta_rho=ablated.spearman_rho - base_report.spearman_rho,
            p_value=p,
        )

    dims = range(params.config.dino_dim)
    workers = _resolve_workers(threads)
    if workers == 1:
        results = [one(j) for j in dims]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, dims))
    _apply_fdr(results, alpha)
    return results


def resnet_block_sweep(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    *,
    alpha: float = 0.01,
    n_perm: int = DEFAULT_N_PERM,
    seed=0,
    use_ema: bool | None = None,
) -> list[AblationResult]:
    """Ablate each residual stage in turn, with BH-FDR flags at alpha."""
    results = [
        ablate_resnet_block(
            checkpoint, eval_set, i, n_perm=n_perm, seed=seed, use_ema=use_ema
        )
        for i in range(1, len(eval_set.block_dims) + 1)
    ]
    _apply_fdr(results, alpha)
    return results


def _apply_fdr(results: list[AblationResult], alpha: float) -> None:
    mask = bh_fdr(np.array([r.p_value for r in results]), alpha)
    for r, flag in zip(results, mask):
        r.fdr_significant = bool(flag)


def _row_pearson_vs(X: np.ndarray, t_centered: np.ndarray, t_norm: float) -> np.ndarray:
    """Pearson r of every row of X against a fixed pre-centered target."""
    Xc = X - X.mean(axis=1, keepdims=True)
    num = Xc @ t_centered
    den = np.sqrt((Xc * Xc).sum(axis=1)) * t_norm
    if np.any(den == 0.0):
        raise UndefinedCorrelationError("zero variance inside permutation test")
    return num / den


def permutation_test_delta(preds_a, preds_b, targets, n_perm: int, seed) -> float:
    """Two-sided paired-swap permutation test on delta r.

    The statistic is r(a, targets) - r(b, targets). Under the null the
    (a_i, b_i) assignment per image is exchangeable, so each permutation
    swaps every pair independently with probability one half. Returns
    (1 + #{|delta_perm| >= |delta_obs|}) / (n_perm + 1); never exactly 0.
    """
    a = np.asarray(preds_a, dtype=np.float64)
    b = np.asarray(preds_b, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if not (a.shape == b.shape == t.shape) or a.ndim != 1:
        raise ValueError("prediction and target vectors must share one 1-D shape")
    if a.shape[0] < 2:
        raise ValueError("permutation test needs at least 2 samples")
    if n_perm < 1:
        raise ValueError(f"n_perm must be >= 1, got {n_perm}")
    t_centered = t - t.mean()
    t_norm = float(np.sqrt(t_centered @ t_centered))
    if t_norm == 0.0:
        raise UndefinedCorrelationError("targets have zero variance")

    d_obs = float(
        _row_pearson_vs(a[None, :], t_centered, t_norm)[0]
        - _row_pearson_vs(b[None, :], t_centered, t_norm)[0]
    )
    rng = np.random.default_rng(seed)
    n = a.shape[0]
    chunk = max(1, min(n_perm, 2_000_000 // n))
    hits = 0
    done = 0
    while done < n_perm:
        m = min(chunk, n_perm - done)
        mask = rng.random((m, n)) < 0.5
        swapped_a = np.where(mask, b, a)
        swapped_b = np.where(mask, a, b)
        deltas = _row_pearson_vs(swapped_a, t_centered, t_norm) - _row_pearson_vs(
            swapped_b, t_centered, t_norm
        )
        hits += int(np.count_nonzero(np.abs(deltas) >= abs(d_obs)))
        done += m
    return (1 + hits) / (n_perm + 1)


def bh_fdr(p_values, alpha: float) -> np.ndarray:
    """Benjamini-Hochberg step-up rejection mask at level alpha.

    Rejects the sorted p(1..k) for the largest k with p(k) <= alpha*k/m
    (boundary inclusive).
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("p_values must be one-dimensional")
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise ValueError("p-values must lie in (0, 1]")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    m = p.shape[0]
    mask = np.zeros(m, dtype=bool)
    if m == 0:
        return mask
    order = np.argsort(p, kind="stable")
    thresholds = alpha * (np.arange(1, m + 1) / m)
    passing = np.nonzero(p[order] <= thresholds)[0]
    if passing.size:
        mask[order[: passing[-1] + 1]] = True
    return mask


def mean_abs_grad_x_input(grads: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Per-dimension mean |gradient * activation| over the sample axis."""
    g = np.asarray(grads, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if g.shape != v.shape or g.ndim != 2:
        raise ValueError("grads and values must share one (n, dim) shape")
    return np.abs(g * v).mean(axis=0)


def grad_importance(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    *,
    n_boot: int = DEFAULT_N_BOOT,
    seed=0,
    use_ema: bool | None = None,
) -> ImportanceProfile:
    """Gradient-activation importance of every raw transformer dimension.

    Importance of dimension j is the mean over images of
    |d(prediction)/d(input_j) * input_j|, taken with respect to the raw
    feature before projection. Skewness of the resulting profile comes
    with a bootstrap sign-symmetry p-value.
    """
    params = checkpoint.eval_params(use_ema)
    require_matching_dims(eval_set, params.config.dino_dim, params.config.resnet_dim)
    if len(eval_set) == 0:
        raise ValueError("evaluation manifest is empty")
    dino = eval_set.dino_matrix()
    resnet = eval_set.resnet_matrix()
    n = dino.shape[0]
    total = np.zeros(params.config.dino_dim, dtype=np.float64)
    for start in range(0, n, _GRAD_CHUNK):
        stop = min(start + _GRAD_CHUNK, n)
        d_grad, _, _ = input_gradients(params, dino[start:stop], resnet[start:stop])
        total += np.abs(
            d_grad.astype(np.float64) * dino[start:stop].astype(np.float64)
        ).sum(axis=0)
    importance = total / n
    g1, p = skewness(importance, n_boot=n_boot, seed=seed)
    return ImportanceProfile(importance=importance, skewness=g1, skewness_p=p)


def attention_weight_correlation(
    checkpoint: Checkpoint,
    eval_set: DatasetManifest,
    *,
    use_ema: bool | None = None,
) -> float:
    """Pearson r between the transformer-branch attention weight and truth."""
    params, dino, resnet, scores = _load_eval(checkpoint, eval_set, use_ema)
    w_d = np.empty(len(eval_set), dtype=np.float64)
    for start in range(0, len(eval_set), _PRED_CHUNK):
        stop = min(start + _PRED_CHUNK, len(eval_set))
        _, w = predict_batch(params, dino[start:stop], resnet[start:stop])
        w_d[start:stop] = w
    return pearson(w_d, scores)


def _row_adjusted_skewness(rows: np.ndarray) -> np.ndarray:
    n = rows.shape[1]
    centered = rows - rows.mean(axis=1, keepdims=True)
    m2 = (centered**2).mean(axis=1)
    m3 = (centered**3).mean(axis=1)
    adjust = np.sqrt(n * (n - 1.0)) / (n - 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = np.where(m2 > 0.0, m3 / np.where(m2 > 0.0, m2, 1.0) ** 1.5, np.inf)
    return adjust * g1


def skewness(sample, *, n_boot: int = DEFAULT_N_BOOT, seed=0) -> tuple[float, float]:
    """Adjusted Fisher-Pearson sample skewness plus a bootstrap p-value.

    The null is symmetry about the sample mean: each resample flips the
    sign of every centered value independently and recomputes the
    statistic; two-sided p = (1 + #{|g1*| >= |g1|}) / (n_boot + 1).
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 3:
        raise ValueError("skewness needs a 1-D sample with n >= 3")
    centered = x - x.mean()
    m2 = float((centered**2).mean())
    if m2 == 0.0:
        raise ValueError("degenerate sample: zero variance")
    n = x.shape[0]
    g1 = float((centered**3).mean() / m2**1.5)
    g1_adj = float(np.sqrt(n * (n - 1.0)) / (n - 2.0) * g1)

    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    chunk = max(1, min(n_boot, 4_000_000 // n))
    mean = x.mean()
    while done < n_boot:
        m = min(chunk, n_boot - done)
        flips = rng.integers(0, 2, size=(m, n)).astype(np.float64) * 2.0 - 1.0
        stats = _row_adjusted_skewness(mean + flips * centered)
        hits += int(np.count_nonzero(np.abs(stats) >= abs(g1_adj)))
        done += m
    return g1_adj, (1 + hits) / (n_boot + 1)


def write_ablation_csv(results: list[AblationResult], path) -> None:
    """One row per ablation: deltas, p-value, and the FDR flag."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["name", "baseline_r", "ablated_r", "delta_r", "delta_rho", "p_value", "fdr_significant"]
        )
        for r in results:
            writer.writerow(
                [
                    r.name,
                    repr(r.baseline.pearson_r),
                    repr(r.ablated.pearson_r),
                    repr(r.delta_r),
                    repr(r.delta_rho),
                    repr(r.p_value),
                    "" if r.fdr_significant is None else str(r.fdr_significant).lower(),
                ]
            )


def write_importance_csv(profile: ImportanceProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim", "importance"])
        for j, value in enumerate(profile.importance):
            writer.writerow([j, repr(float(value))])


def render_ablation_report(results: list[AblationResult]) -> str:
    """Plain-text summary, one block per ablation, four-decimal metrics."""
    lines = []
    for r in results:
        lines.append(f"[{r.name}]")
        lines.append(f"  baseline_r: {r.baseline.pearson_r:.4f}  ablated_r: {r.ablated.pearson_r:.4f}")
        lines.append(f"  delta_r: {r.delta_r:+.4f}  delta_rho: {r.delta_rho:+.4f}")
        flag = "" if r.fdr_significant is None else f"  fdr_significant: {str(r.fdr_significant).lower()}"
        lines.append(f"  p_value: {r.p_value:.6g}{flag}")
    return "\n".join(lines) + "\n"


def render_importance_report(profile: ImportanceProfile) -> str:
    top = np.argsort(profile.importance)[::-1][:10]
    lines = [
        f"dims: {profile.importance.shape[0]}",
        f"skewness: {profile.skewness:.4f}",
        f"skewness_p: {profile.skewness_p:.6g}",
        "top_dims (dim: importance):",
    ]
    for j in top:
        lines.append(f"  {int(j)}: {profile.importance[j]:.6g}")
    return "\n".join(lines) + "\n"
