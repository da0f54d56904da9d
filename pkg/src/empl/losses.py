"""Earth Mover's Pinball Loss (exact and smoothed), comparison losses and metrics.

Every function takes density histograms, either as ``DensityHistogram``
objects or as arrays of shape ``(N,)`` / ``(B, N)``.  Batched inputs are
reduced with the arithmetic mean over bins and batch.  ``tau`` may be a
scalar, a ``QuantileLevel`` or one level per sample, shape ``(B,)``.

Sign convention: ``delta = V - U`` with ``U`` the label CDF and ``V`` the
prediction CDF.  Ties ``delta == 0`` are counted on the ``delta >= 0``
side, so the per-bin multiplier on ``delta`` is ``1[delta >= 0] - tau``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .histcore import DimensionMismatch, HistogramError, tau_of, values_of

LOG_FLOOR = 1e-300
SIGMA_FLOOR = 1e-4

TRAINING_LOSSES = ("empl", "empl_smoothed", "w1", "em2", "cross_entropy", "mae", "mse")


class LogOfZero(HistogramError):
    pass


def _pair(label, pred):
    u = values_of(label)
    v = values_of(pred)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionMismatch(f"label has {u.shape[-1]} bins, prediction has {v.shape[-1]}")
    return np.broadcast_arrays(u, v)


def _tau_column(tau, ndim):
    t = tau_of(tau)
    if np.any(t <= 0) or np.any(t >= 1):
        raise ValueError("quantile levels must lie in (0, 1)")
    if t.ndim == 1 and ndim == 2:
        t = t[:, None]
    return t


def _check_alpha(alpha):
    if not alpha > 0:
        raise ValueError(f"smoothing parameter must be > 0, got {alpha!r}; use empl() for alpha = 0")


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def reverse_cumsum(g):
    """Adjoint of ``np.cumsum`` along the last axis."""
    return np.flip(np.cumsum(np.flip(g, axis=-1), axis=-1), axis=-1)


# -- losses on cumulative histograms -------------------------------------------------

def empl_terms_cumulative(U, V, tau):
    """Per-bin exact EMPL terms for cumulative histograms ``U`` (label), ``V`` (prediction)."""
    delta = np.asarray(V, dtype=np.float64) - np.asarray(U, dtype=np.float64)
    return ((delta >= 0).astype(np.float64) - tau) * delta


def empl_cumulative(U, V, tau) -> float:
    U = np.asarray(U, dtype=np.float64)
    return float(np.mean(empl_terms_cumulative(U, V, _tau_column(tau, U.ndim))))


# -- the EMPL family -----------------------------------------------------------------

def empl(label, pred, tau) -> float:
    u, v = _pair(label, pred)
    t = _tau_column(tau, u.ndim)
    return float(np.mean(empl_terms_cumulative(np.cumsum(u, -1), np.cumsum(v, -1), t)))


def empl_smoothed(label, pred, tau, alpha: float) -> float:
    _check_alpha(alpha)
    u, v = _pair(label, pred)
    t = _tau_column(tau, u.ndim)
    delta = np.cumsum(v, -1) - np.cumsum(u, -1)
    return float(np.mean(-t * delta + alpha * softplus(delta / alpha)))


def empl_grad(label, pred, tau, alpha=None) -> np.ndarray:
    """Gradient of (smoothed) EMPL with respect to the predicted density histogram.

    ``alpha=None`` (or 0) differentiates the exact loss using the one-sided
    multiplier ``1[delta >= 0] - tau`` at ties.
    """
    u, v = _pair(label, pred)
    t = _tau_column(tau, u.ndim)
    delta = np.cumsum(v, -1) - np.cumsum(u, -1)
    if alpha:
        _check_alpha(alpha)
        g_cum = expit(delta / alpha) - t
    else:
        g_cum = (delta >= 0).astype(np.float64) - t
    g_cum = np.broadcast_to(g_cum, delta.shape) / delta.size
    return reverse_cumsum(g_cum)


# -- Wasserstein-type metrics --------------------------------------------------------

def w1(label, pred) -> float:
    u, v = _pair(label, pred)
    return float(np.mean(np.abs(np.cumsum(u, -1) - np.cumsum(v, -1))))


def em2(label, pred) -> float:
    u, v = _pair(label, pred)
    return float(np.mean((np.cumsum(u, -1) - np.cumsum(v, -1)) ** 2))


# -- per-bin losses ------------------------------------------------------------------

def pinball_scalar(y, y_hat, tau):
    """Pinball loss; works elementwise on arrays as well as on scalars."""
    t = tau_of(tau)
    r = np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)
    out = np.where(r >= 0, t * r, (t - 1.0) * r)
    return float(out) if out.ndim == 0 else out


def cross_entropy(label, pred) -> float:
    """``-sum_j m_j log v_j`` per histogram, averaged over the batch."""
    u, v = _pair(label, pred)
    support = u > 0
    if np.any(v[support] <= LOG_FLOOR):
        raise LogOfZero("prediction has (numerically) zero mass where the label has mass")
    logs = np.zeros_like(v)
    logs[support] = np.log(v[support])
    per_sample = -np.sum(u * logs, axis=-1)
    return float(np.mean(per_sample))


def mae(label, pred) -> float:
    u, v = _pair(label, pred)
    return float(np.mean(np.abs(u - v)))


def mse(label, pred) -> float:
    u, v = _pair(label, pred)
    return float(np.mean((u - v) ** 2))


def histogram_intersection(label, pred) -> float:
    u, v = _pair(label, pred)
    return float(np.mean(np.sum(np.minimum(u, v), axis=-1)))


# -- training dispatch ---------------------------------------------------------------

def loss_and_grad(name: str, label, pred, tau=None, alpha=None):
    """Value and gradient w.r.t. the predicted density for a named training loss."""
    u, v = _pair(label, pred)
    n = v.size
    if name == "empl":
        return empl(u, v, tau), empl_grad(u, v, tau)
    if name == "empl_smoothed":
        return empl_smoothed(u, v, tau, alpha), empl_grad(u, v, tau, alpha)
    if name == "w1":
        d = np.cumsum(v, -1) - np.cumsum(u, -1)
        return w1(u, v), reverse_cumsum(np.sign(d) / n)
    if name == "em2":
        d = np.cumsum(v, -1) - np.cumsum(u, -1)
        return em2(u, v), reverse_cumsum(2.0 * d / n)
    if name == "mae":
        return mae(u, v), np.sign(v - u) / n
    if name == "mse":
        return mse(u, v), 2.0 * (v - u) / n
    if name == "cross_entropy":
        value = cross_entropy(u, v)
        batch = v.size // v.shape[-1]
        return value, np.where(u > 0, -u / np.maximum(v, LOG_FLOOR), 0.0) / batch
    raise ValueError(f"unknown training loss {name!r}; expected one of {TRAINING_LOSSES}")


def gaussian_nll(label, mu, sigma):
    """Per-bin Gaussian negative log-likelihood of the label CDF.

    ``mu`` and ``sigma`` are per-bin means and standard deviations of the
    cumulative histogram.  Returns ``(value, d/d mu, d/d sigma)``.
    """
    U = np.cumsum(values_of(label), -1)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if U.shape[-1] != mu.shape[-1] or mu.shape != sigma.shape:
        raise DimensionMismatch("label, mean and sigma shapes disagree")
    r = U - mu
    z2 = (r / sigma) ** 2
    value = float(np.mean(np.log(sigma) + 0.5 * z2 + 0.5 * np.log(2 * np.pi)))
    n = mu.size
    d_mu = -r / sigma**2 / n
    d_sigma = (1.0 / sigma - r**2 / sigma**3) / n
    return value, d_mu, d_sigma
