import numpy as np

from ..gp_core import LOG_2PI


def _pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape[0]} vs {y_pred.shape[0]}")
    return y_true, y_pred


def metric_rmse(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def metric_mae(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.mean(np.abs(y_true - y_pred)))


def metric_mnlp(y_true, means, variances) -> float:
    """Mean negative log density of ``y_true`` under independent Gaussians."""
    y_true, means = _pair(y_true, means)
    variances = np.asarray(variances, dtype=np.float64).reshape(-1)
    if variances.shape != y_true.shape:
        raise ValueError("length mismatch between variances and targets")
    if np.any(variances <= 0):
        raise ValueError("variances must be positive")
    nlp = 0.5 * (LOG_2PI + np.log(variances) + (y_true - means) ** 2 / variances)
    return float(np.mean(nlp))


def quantile_band(values, lower=0.1, upper=0.9):
    """``(q_lower, median, q_upper)`` by linear interpolation between order statistics."""
    values = np.asarray(values, dtype=np.float64)
    q = np.quantile(values, [lower, 0.5, upper], axis=0, method="linear")
    return q[0], q[1], q[2]
