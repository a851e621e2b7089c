"""
Convergence diagnostics and posterior summaries.

Component labels switch freely, so chains are monitored through
permutation-invariant functionals: the smallest and largest component mean
and component variance along each spatial dimension.
"""

import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import stats

from demandmix.logging.exceptions import DiagnosticException
from demandmix.objects.mixture import Component
from demandmix.sampling.fixed_k import PosteriorDraw

LOG = logging.getLogger(__name__)

MIN_ESS_LENGTH = 10


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance at every lag, via FFT."""
    n = len(x)
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    centered = x - x.mean()
    spectrum = np.fft.rfft(centered, n=size)
    return np.fft.irfft(spectrum * np.conjugate(spectrum), n=size)[:n] / n


def effective_sample_size(chain: Sequence[float]) -> float:
    """
    N / τ with τ from Geyer's initial positive (and monotone) sequence of
    autocorrelation pairs. A constant chain has ESS = N.
    """
    x = np.asarray(chain, dtype=float)
    n = len(x)
    if n < MIN_ESS_LENGTH:
        raise DiagnosticException(
            f"Effective sample size needs at least {MIN_ESS_LENGTH} values, got {n}."
        )
    acov = _autocovariance(x)
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]

    rho_t = np.zeros(n)
    rho_t[0], rho_t[1] = 1.0, rho[1]
    even, odd = 1.0, rho[1]
    t = 1
    while t < n - 2 and even + odd >= 0.0:
        even, odd = rho[t + 1], rho[t + 2]
        rho_t[t + 1] = even
        if even + odd >= 0:
            rho_t[t + 2] = odd
        t += 2
    max_t = t
    t = 1
    while t <= max_t - 2:
        if rho_t[t + 1] + rho_t[t + 2] > rho_t[t - 1] + rho_t[t]:
            rho_t[t + 1] = rho_t[t + 2] = 0.5 * (rho_t[t - 1] + rho_t[t])
        t += 2
    tau = -1.0 + 2.0 * rho_t[:max_t].sum() + rho_t[max_t + 1 : max_t + 2].sum()
    tau = max(tau, 1.0 / math.log10(n))
    return float(n / tau)


def gelman_rubin(chains: Sequence[Sequence[float]]) -> float:
    """√((W(n−1)/n + B/n) / W) for m ≥ 2 chains of equal length n."""
    lengths = {len(c) for c in chains}
    if len(chains) < 2 or len(lengths) != 1:
        raise DiagnosticException(
            "Gelman-Rubin needs at least two chains of equal length."
        )
    x = np.asarray(chains, dtype=float)
    n = x.shape[1]
    if n < 2:
        raise DiagnosticException("Gelman-Rubin needs at least two draws per chain.")
    within = float(x.var(axis=1, ddof=1).mean())
    if within == 0:
        raise DiagnosticException("Within-chain variance is zero.")
    between = n * float(x.mean(axis=1).var(ddof=1))
    return math.sqrt((within * (n - 1) / n + between / n) / within)


def extreme_functionals(draws: Sequence[PosteriorDraw]) -> Dict[str, np.ndarray]:
    """Per-draw min/max of component means and variances along x and y."""
    out: Dict[str, List[float]] = {}
    for draw in draws:
        mu = np.array([c.mu for c in draw.mixture.components])
        var = np.array([np.diag(c.sigma) for c in draw.mixture.components])
        for dim, axis in enumerate("xy"):
            for name, values in (("mean", mu[:, dim]), ("var", var[:, dim])):
                out.setdefault(f"min_{name}_{axis}", []).append(float(values.min()))
                out.setdefault(f"max_{name}_{axis}", []).append(float(values.max()))
    return {k: np.array(v) for k, v in out.items()}


def summarize_chains(
    chains: Sequence[Sequence[PosteriorDraw]],
) -> Dict[str, Dict[str, float]]:
    """ESS (summed over chains) and, with several chains, R-hat per functional."""
    per_chain = [extreme_functionals(c) for c in chains]
    summary: Dict[str, Dict[str, float]] = {}
    for name in per_chain[0]:
        series = [f[name] for f in per_chain]
        entry = {
            "mean": float(np.mean(np.concatenate(series))),
            "ess": float(sum(effective_sample_size(s) for s in series)),
        }
        if len(series) >= 2:
            shortest = min(len(s) for s in series)
            try:
                entry["rhat"] = gelman_rubin([s[:shortest] for s in series])
            except DiagnosticException as ex:
                LOG.warning("R-hat for %s unavailable: %s", name, ex.message)
        summary[name] = entry
        LOG.info("%s: %s", name, entry)
    return summary


def component_ellipse(
    component: Component, level: float = 0.9
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Center, semi-axis lengths (major first) and major-axis angle in radians."""
    values, vectors = np.linalg.eigh(component.sigma)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    scale = math.sqrt(stats.chi2.ppf(level, df=2))
    angle = math.atan2(vectors[1, 0], vectors[0, 0])
    return np.array(component.mu), scale * np.sqrt(values), angle


def posterior_mean_rho(draws: Sequence[PosteriorDraw]) -> np.ndarray:
    """Posterior mean of ρ_r per weight column (fixed-K runs only)."""
    ks = {d.K for d in draws}
    if len(ks) != 1:
        raise DiagnosticException(
            "Per-component summaries need draws with a common number of components."
        )
    return np.mean([d.car.rho for d in draws], axis=0)
