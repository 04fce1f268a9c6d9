"""Synthetic stand-ins for the pulsar table, with a known latent difficulty."""
from __future__ import annotations

import csv

import numpy as np

from .dataprep import Table

PULSAR_COLUMNS = ["mean_ip", "sd_ip", "kurtosis_ip", "skew_ip"]
HTRU2_COLUMNS = PULSAR_COLUMNS + ["mean_dmsnr", "sd_dmsnr", "kurtosis_dmsnr", "skew_dmsnr", "target_class"]


def make_pulsar_like(n: int = 17898, n_pulsar: int | None = 1639, separation: float = 3.0,
                     seed: int = 0) -> tuple[Table, np.ndarray]:
    """Integrated-profile-shaped features driven by a latent score.

    Pulsars (``target_class == 1``) draw the latent score around
    ``+separation/2``, other stars around ``-separation/2``. Mean and standard
    deviation fall with the latent score, kurtosis and skew rise with it, as in
    the real survey data. Returns the table and the latent scores.
    """
    rng = np.random.default_rng(seed)
    k = n_pulsar if n_pulsar is not None else n // 2
    labels = np.zeros(n)
    labels[rng.choice(n, size=k, replace=False)] = 1.0
    z = rng.standard_normal(n) + np.where(labels == 1, separation / 2, -separation / 2)
    e = rng.standard_normal((n, 8))
    cols = {
        "mean_ip": 105.0 - 18.0 * z + 9.0 * e[:, 0],
        "sd_ip": 44.0 - 3.5 * z + 2.0 * e[:, 1],
        "kurtosis_ip": 1.0 + 1.1 * z + 0.6 * e[:, 2],
        "skew_ip": 3.0 + 3.0 * z + 2.0 * e[:, 3],
        "mean_dmsnr": 12.0 + 5.0 * e[:, 4],
        "sd_dmsnr": 26.0 + 6.0 * e[:, 5],
        "kurtosis_dmsnr": 8.0 + 4.0 * e[:, 6],
        "skew_dmsnr": 100.0 + 40.0 * e[:, 7],
        "target_class": labels,
    }
    return Table(cols, np.arange(n)), z


def write_htru2_csv(table: Table, path) -> None:
    """Write ``table`` in the headerless nine-column HTRU2 layout."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for i in range(len(table)):
            row = [table.columns[c][i] for c in HTRU2_COLUMNS]
            w.writerow([int(v) if c == "target_class" else f"{v:.8f}" for c, v in zip(HTRU2_COLUMNS, row)])
