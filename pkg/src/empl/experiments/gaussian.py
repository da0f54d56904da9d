"""Per-bin Gaussian likelihood baseline for the cumulative histogram.

The mean of each bin comes from a softmax/cumsum head (monotone, ending at
one); the standard deviations are free.  Quantile bands ``mu + z_tau * sigma``
are deliberately left unclipped so range and monotonicity violations stay
visible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .. import nn


def init_gaussian_net(input_dim, hidden, n_bins, rng, *, batch_norm=True, dropout=0.0) -> nn.Network:
    return nn.init_network(input_dim, hidden, n_bins, rng, batch_norm=batch_norm, dropout=dropout,
                           head="gaussian", tau_input=False)


GAUSSIAN_LOSS = nn.LossConfig("gaussian_nll", "fixed")


def gaussian_band(net: nn.Network, x, taus) -> np.ndarray:
    """Quantile bands of shape ``(n_x, n_tau, N)``."""
    trace = nn.forward(net, np.atleast_2d(np.asarray(x, dtype=np.float64)), mode="eval")
    z = norm.ppf(np.asarray(taus, dtype=np.float64))
    return trace.cumulative[:, None, :] + z[None, :, None] * trace.sigma[:, None, :]


@dataclass
class BandFlags:
    out_of_range: int
    non_monotone: int

    @property
    def total(self) -> int:
        return self.out_of_range + self.non_monotone


def band_flags(band: np.ndarray, tol: float = 0.0) -> BandFlags:
    """Count band values outside [0, 1] and decreases across bins.

    ``band`` has bins on the last axis.
    """
    band = np.asarray(band)
    out = int(np.sum((band < -tol) | (band > 1 + tol)))
    dec = int(np.sum(np.diff(band, axis=-1) < -tol))
    return BandFlags(out, dec)
