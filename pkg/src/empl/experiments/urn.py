"""Drawing numbered balls from an urn: the toy problem with analytic quantiles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..oracles import UrnSpec, urn_quantile_table, urn_sample

EVAL_DRAWS = (1, 10, 100, 1000)
EVAL_TAUS = tuple(np.round(np.arange(1, 10) / 10, 10))


@dataclass(frozen=True)
class UrnExperiment:
    n_balls: int = 5
    max_log10_draws: float = 3.0
    hidden: tuple = (128, 128)
    batch_norm: bool = True
    dropout: float = 0.0
    loss: nn.LossConfig = field(default_factory=lambda: nn.LossConfig("empl", "uniform"))
    schedule: nn.Schedule = field(default_factory=lambda: nn.Schedule(10_000, 0, 2048, 1e-3, 100))
    seed: int = 0


def draws_feature(draws) -> np.ndarray:
    """Network input for a draw count: ``log10(x)`` as a column."""
    return np.log10(np.asarray(draws, dtype=np.float64)).reshape(-1, 1)


def sample_draw_counts(rng, size, max_log10=3.0) -> np.ndarray:
    return np.rint(10.0 ** rng.uniform(0.0, max_log10, size)).astype(np.int64)


def make_sampler(n_balls: int, max_log10: float = 3.0):
    p = np.full(n_balls, 1.0 / n_balls)

    def sample(rng, batch_size):
        draws = sample_draw_counts(rng, batch_size, max_log10)
        counts = rng.multinomial(draws, p)
        return draws_feature(draws), counts / draws[:, None]
    return sample


def held_out_set(n_balls, n, rng, max_log10=3.0):
    """``(draws, features, labels)`` drawn from the training distribution."""
    draws = sample_draw_counts(rng, n, max_log10)
    labels = rng.multinomial(draws, np.full(n_balls, 1.0 / n_balls)) / draws[:, None]
    return draws, draws_feature(draws), labels


def init_urn_net(cfg: UrnExperiment, rng) -> nn.Network:
    return nn.init_network(1, cfg.hidden, cfg.n_balls, rng, batch_norm=cfg.batch_norm,
                           dropout=cfg.dropout)


@dataclass
class UrnReport:
    draws: tuple
    taus: tuple
    predicted: np.ndarray  # (len(draws), len(taus), N)
    truth: np.ndarray

    @property
    def abs_dev(self) -> np.ndarray:
        return np.abs(self.predicted - self.truth)

    @property
    def max_dev(self) -> float:
        return float(self.abs_dev.max())

    @property
    def mean_dev(self) -> float:
        return float(self.abs_dev.mean())

    def rows(self):
        """``(draws, tau, bin, predicted, analytic)`` rows in a fixed order."""
        for a, x in enumerate(self.draws):
            for t, tau in enumerate(self.taus):
                for j in range(self.predicted.shape[2]):
                    yield x, tau, j + 1, self.predicted[a, t, j], self.truth[a, t, j]


def evaluate_urn(net: nn.Network, n_balls: int, draws=EVAL_DRAWS, taus=EVAL_TAUS) -> UrnReport:
    predicted = nn.predict_cumulative(net, draws_feature(draws), taus)
    truth = np.stack([urn_quantile_table(UrnSpec(n_balls, int(x)), taus) for x in draws])
    return UrnReport(tuple(int(x) for x in draws), tuple(float(t) for t in taus), predicted, truth)


def run_urn(cfg: UrnExperiment, progress=None):
    """Train on freshly sampled urn histograms.  Returns ``(net, curve, report)``."""
    rng = np.random.default_rng(cfg.seed)
    net = init_urn_net(cfg, rng)
    net, curve = nn.train(net, make_sampler(cfg.n_balls, cfg.max_log10_draws), cfg.loss,
                          cfg.schedule, rng, progress=progress)
    return net, curve, evaluate_urn(net, cfg.n_balls)


def urn_truth_generator(n_balls):
    def gen(draws, rng, n):
        return urn_sample(UrnSpec(n_balls, int(draws)), rng, size=n)
    return gen
