"""Similarity functions between points and between sphere distributions.

Cosine similarity for unit vectors, and the expected likelihood kernel
ELK(p, q) = integral of p(z) q(z) dz for probabilistic embeddings.  The
vMF-vMF ELK has the closed form

    C_d(k1) * C_d(k2) / C_d(||k1 mu1 + k2 mu2||)

and everything else goes through Monte Carlo.  ELK values are carried in
log domain so concentrations of order 1e3+ stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sphere import (
    NonIsotropicVMF,
    VonMisesFisher,
    log_normalizer,
    nivmf_log_density,
    sample_vmf,
)

__all__ = ["SimilarityValue", "cosine_similarity", "elk_vmf_vmf", "elk_mc", "elk_vmf_nivmf"]


@dataclass(frozen=True)
class SimilarityValue:
    """A similarity score; ``se`` is the linear-domain standard error of the
    integral estimate for Monte Carlo kernels (None for exact values)."""

    value: float
    log_domain: bool
    se: float | None = None


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> SimilarityValue:
    """a.b for unit vectors; symmetric, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return SimilarityValue(value=float(a @ b), log_domain=False)


def elk_vmf_vmf(p: VonMisesFisher, q: VonMisesFisher) -> SimilarityValue:
    """Closed-form log ELK between two vMF distributions."""
    if p.d != q.d:
        raise ValueError(f"dimension mismatch: {p.d} vs {q.d}")
    combined = float(np.linalg.norm(p.kappa * p.mu + q.kappa * q.mu))
    value = (
        log_normalizer(p.d, p.kappa)
        + log_normalizer(q.d, q.kappa)
        - log_normalizer(p.d, combined)
    )
    return SimilarityValue(value=value, log_domain=True)


def elk_mc(p, q, n: int, seed: int) -> SimilarityValue:
    """Monte Carlo log ELK: draw z ~ p, average the density of q.

    Unbiased for the linear-domain integral; ``se`` is the standard error of
    that mean.  p must support sampling (a vMF); q must expose a log density
    (vMF or nivMF).
    """
    if n < 1000:
        raise ValueError("n must be >= 1000 for a usable error estimate")
    if not isinstance(p, VonMisesFisher):
        raise TypeError(f"p must support sampling (vMF), got {type(p).__name__}")
    if p.d != q.d:
        raise ValueError(f"dimension mismatch: {p.d} vs {q.d}")
    z = sample_vmf(p, n, seed).points
    if isinstance(q, NonIsotropicVMF):
        logw = nivmf_log_density(q, z)
    elif isinstance(q, VonMisesFisher):
        logw = q.log_density(z)
    else:
        raise TypeError(f"q must expose a density (vMF or nivMF), got {type(q).__name__}")
    # Stable mean/SE of exp(logw).
    m = float(logw.max())
    w = np.exp(logw - m)
    mean = float(w.mean())
    se = float(np.exp(m) * w.std(ddof=1) / math.sqrt(n))
    return SimilarityValue(value=m + math.log(mean), log_domain=True, se=se)


def elk_vmf_nivmf(p: VonMisesFisher, q: NonIsotropicVMF, n: int, seed: int) -> SimilarityValue:
    """log ELK between a vMF and a nivMF, via Monte Carlo.

    No closed form is assumed; this delegates to ``elk_mc`` with the cached
    nivMF normalizer.  The differentiable training-path version of this
    kernel lives in ``suq.losses`` on the autodiff tape.
    """
    if p.d != q.d:
        raise ValueError(f"dimension mismatch: {p.d} vs {q.d}")
    return elk_mc(p, q, n, seed)
