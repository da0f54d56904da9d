"""Bimodal toy problem: each cumulative-histogram bin has a two-peaked distribution.

Input ``X = (b1, b2, xi)``.  With probability ``xi`` the label is a
discretized Gaussian bump centred at bin 3.5, otherwise at bin 7.5; the
bump width in bins is ``0.5 + 2.5 * b_k``.  Each bin is then multiplied by
``exp(0.1 * g)``, ``g ~ N(0, 1)``, and the histogram renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..oracles import coverage_levels, coverage_of_band, mc_quantile_band
from .gaussian import GAUSSIAN_LOSS, gaussian_band, init_gaussian_net

N_BINS = 10
CENTRES = (3.5, 7.5)
JITTER = 0.1
BIN_POSITIONS = np.arange(1, N_BINS + 1, dtype=np.float64)

PANEL_INPUTS = ((0.2, 0.2, 0.8), (0.8, 0.8, 0.2), (0.5, 0.5, 0.5))
CALIBRATION_INPUT = (0.5, 0.5, 0.5)
BAND_LEVELS = tuple(np.round(np.arange(0.05, 1.0, 0.1), 10))
ALPHAS = tuple(np.round(np.arange(1, 10) / 10, 10))


@dataclass(frozen=True)
class BimodalSpec:
    b1: float
    b2: float
    xi: float

    def __post_init__(self):
        for name in ("b1", "b2", "xi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")

    def as_array(self):
        return np.array([self.b1, self.b2, self.xi])


def mode_width(b):
    return 0.5 + 2.5 * np.asarray(b, dtype=np.float64)


def _generate(b1, b2, xi, rng):
    first = rng.random(len(xi)) < xi
    centre = np.where(first, CENTRES[0], CENTRES[1])
    width = mode_width(np.where(first, b1, b2))
    bumps = np.exp(-0.5 * ((BIN_POSITIONS[None, :] - centre[:, None]) / width[:, None]) ** 2)
    bumps *= np.exp(JITTER * rng.standard_normal(bumps.shape))
    return bumps / bumps.sum(axis=1, keepdims=True), first


def bimodal_generate(spec: BimodalSpec, rng, size: int = 1, return_modes: bool = False):
    """``size`` label histograms for one input; shape ``(size, 10)``."""
    ones = np.ones(size)
    dens, first = _generate(spec.b1 * ones, spec.b2 * ones, spec.xi * ones, rng)
    return (dens, first) if return_modes else dens


def truth_generator(x_input, rng, n):
    return bimodal_generate(BimodalSpec(*x_input), rng, n)


def sample_batch(rng, batch_size):
    x = rng.random((batch_size, 3))
    dens, _ = _generate(x[:, 0], x[:, 1], x[:, 2], rng)
    return x, dens


@dataclass(frozen=True)
class BimodalExperiment:
    hidden: tuple = (256, 256)
    batch_norm: bool = True
    loss: nn.LossConfig = field(default_factory=lambda: nn.LossConfig("empl", "uniform"))
    schedule: nn.Schedule = field(default_factory=lambda: nn.Schedule(10_000, 0, 2048, 1e-3, 100))
    baseline_schedule: nn.Schedule = None
    eval_samples: int = 20_000
    seed: int = 0


@dataclass
class BimodalReport:
    panel_inputs: tuple
    levels: tuple
    empl_bands: np.ndarray   # (n_inputs, n_levels, N)
    gauss_bands: np.ndarray
    truth_bands: np.ndarray
    cdf_taus: np.ndarray
    cdf_empl: np.ndarray     # predicted bin-5 quantiles at cdf_taus
    cdf_gauss: np.ndarray
    cdf_truth_sorted: np.ndarray  # sorted MC truth values of M_5
    alphas: tuple
    empl_coverage: np.ndarray
    gauss_coverage: np.ndarray

    @property
    def empl_max_calibration_error(self) -> float:
        return float(np.max(np.abs(self.empl_coverage - np.asarray(self.alphas))))

    @property
    def gauss_max_calibration_error(self) -> float:
        return float(np.max(np.abs(self.gauss_coverage - np.asarray(self.alphas))))


def _empl_predictor(net):
    def predict(x_input, taus):
        return nn.predict_cumulative(net, np.asarray(x_input)[None, :], taus)[0]
    return predict


def _gauss_predictor(net):
    def predict(x_input, taus):
        return gaussian_band(net, np.asarray(x_input)[None, :], taus)[0]
    return predict


def evaluate_bimodal(empl_net, gauss_net, n_samples, rng, alphas=ALPHAS) -> BimodalReport:
    empl_pred = _empl_predictor(empl_net)
    gauss_pred = _gauss_predictor(gauss_net)
    levels = np.asarray(BAND_LEVELS)
    empl_b, gauss_b, truth_b = [], [], []
    for x_in in PANEL_INPUTS:
        x_in = np.asarray(x_in)
        empl_b.append(empl_pred(x_in, levels))
        gauss_b.append(gauss_pred(x_in, levels))
        truth_b.append(mc_quantile_band(truth_generator, x_in, levels, n_samples, rng).values)

    x_cal = np.asarray(CALIBRATION_INPUT)
    truth = np.cumsum(truth_generator(x_cal, rng, n_samples), axis=1)
    cdf_taus = np.round(np.arange(1, 100) / 100, 10)
    lo, hi = coverage_levels(alphas)
    empl_cov = coverage_of_band(empl_pred(x_cal, lo), empl_pred(x_cal, hi), truth)
    gauss_cov = coverage_of_band(gauss_pred(x_cal, lo), gauss_pred(x_cal, hi), truth)
    return BimodalReport(
        PANEL_INPUTS, tuple(float(t) for t in levels), np.stack(empl_b), np.stack(gauss_b),
        np.stack(truth_b), cdf_taus, empl_pred(x_cal, cdf_taus)[:, 4],
        gauss_pred(x_cal, cdf_taus)[:, 4], np.sort(truth[:, 4]), tuple(float(a) for a in alphas),
        empl_cov, gauss_cov)


def run_bimodal(cfg: BimodalExperiment, progress=None):
    """Train the EMPL net and the Gaussian baseline.  Returns ``(empl_net, gauss_net, curves, report)``."""
    rng = np.random.default_rng(cfg.seed)
    empl_net = nn.init_network(3, cfg.hidden, N_BINS, rng, batch_norm=cfg.batch_norm)
    empl_net, curve = nn.train(empl_net, sample_batch, cfg.loss, cfg.schedule, rng, progress=progress)
    gauss_net = init_gaussian_net(3, cfg.hidden, N_BINS, rng, batch_norm=cfg.batch_norm)
    gauss_net, gauss_curve = nn.train(gauss_net, sample_batch, GAUSSIAN_LOSS,
                                      cfg.baseline_schedule or cfg.schedule, rng)
    report = evaluate_bimodal(empl_net, gauss_net, cfg.eval_samples, rng)
    return empl_net, gauss_net, {"empl": curve, "gaussian": gauss_curve}, report
