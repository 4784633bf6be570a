"""Evaluation metrics: Pearson r, Spearman rho, RMSE, and MAE.

Computed in float64 regardless of feature precision so reported tables
are reproducible to four decimals. Correlations on degenerate
(zero-variance) inputs raise rather than returning NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UndefinedCorrelationError


def _as_float64_pair(c, c_hat) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(c, dtype=np.float64)
    c_hat = np.asarray(c_hat, dtype=np.float64)
    if c.ndim != 1 or c_hat.ndim != 1:
        raise ValueError("metric inputs must be one-dimensional")
    if c.shape[0] != c_hat.shape[0]:
        raise ValueError(f"length mismatch: {c.shape[0]} vs {c_hat.shape[0]}")
    return c, c_hat


def pearson(c, c_hat) -> float:
    """Pearson correlation coefficient between two score vectors."""
    c, c_hat = _as_float64_pair(c, c_hat)
    if c.shape[0] < 2:
        raise ValueError("pearson needs at least 2 samples")
    dc = c - c.mean()
    dp = c_hat - c_hat.mean()
    ss_c = float(dc @ dc)
    ss_p = float(dp @ dp)
    if ss_c == 0.0 or ss_p == 0.0:
        raise UndefinedCorrelationError("zero variance: correlation undefined")
    r = float(dc @ dp) / np.sqrt(ss_c * ss_p)
    return float(min(1.0, max(-1.0, r)))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties replaced by the mean of their rank range."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0], dtype=np.float64)
    sorted_x = x[order]
    i = 0
    n = x.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(c, c_hat) -> float:
    """Spearman's rho: Pearson correlation applied to average-tied ranks."""
    c, c_hat = _as_float64_pair(c, c_hat)
    if c.shape[0] < 2:
        raise ValueError("spearman needs at least 2 samples")
    return pearson(average_ranks(c), average_ranks(c_hat))


def error_metrics(c, c_hat) -> tuple[float, float]:
    """(RMSE, MAE) of the residuals c - c_hat."""
    c, c_hat = _as_float64_pair(c, c_hat)
    if c.shape[0] == 0:
        raise ValueError("error metrics need at least 1 sample")
    residuals = c - c_hat
    rmse = float(np.sqrt(np.mean(residuals * residuals)))
    mae = float(np.mean(np.abs(residuals)))
    return rmse, mae


@dataclass
class MetricReport:
    """The standard evaluation quadruple over one prediction set."""

    pearson_r: float
    spearman_rho: float
    rmse: float
    mae: float
    n: int

    def format(self) -> str:
        """Four-decimal rendering, one metric per line."""
        return (
            f"n: {self.n}\n"
            f"pearson_r: {self.pearson_r:.4f}\n"
            f"spearman_rho: {self.spearman_rho:.4f}\n"
            f"rmse: {self.rmse:.4f}\n"
            f"mae: {self.mae:.4f}\n"
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "pearson_r": self.pearson_r,
            "spearman_rho": self.spearman_rho,
            "rmse": self.rmse,
            "mae": self.mae,
        }


def compute_report(c, c_hat) -> MetricReport:
    """All four metrics over one prediction set (n >= 2)."""
    c, c_hat = _as_float64_pair(c, c_hat)
    rmse, mae = error_metrics(c, c_hat)
    return MetricReport(
        pearson_r=pearson(c, c_hat),
        spearman_rho=spearman(c, c_hat),
        rmse=rmse,
        mae=mae,
        n=int(c.shape[0]),
    )
