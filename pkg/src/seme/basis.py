"""Semantic bases from the LM-head pseudoinverse, and probabilities on the vocabulary."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .archive import ModelBundle, Tensor, TensorArchive, fingerprint_array

logger = logging.getLogger(__name__)

COSINE_SOFTMAX = "cosine-softmax"
LOGIT_SOFTMAX = "logit-softmax"


@dataclass(frozen=True)
class PseudoinverseConfig:
    rcond: float = 1e-6
    max_condition_warn: float = 1e8

    def __post_init__(self):
        if not 0.0 < self.rcond < 1.0:
            raise ValueError(f"rcond must lie in (0, 1), got {self.rcond}")


def pseudoinverse(W: np.ndarray, cfg: PseudoinverseConfig | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse by SVD.

    Singular values below ``rcond * sigma_max`` are treated as zero. A d x v
    input gives a v x d result in float64.
    """
    cfg = cfg or PseudoinverseConfig()
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or min(W.shape) < 1:
        raise ValueError(f"expected a non-empty matrix, got shape {W.shape}")
    if not np.isfinite(W).all():
        raise ValueError("pseudoinverse input contains non-finite values")
    u, s, vt = np.linalg.svd(W, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(W.T.shape)
    keep = s > cfg.rcond * s[0]
    rank = int(keep.sum())
    if rank == len(s) and s[-1] > 0 and s[0] / s[-1] > cfg.max_condition_warn:
        logger.warning("ill-conditioned LM-head: condition number %.3g", s[0] / s[-1])
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T


def moore_penrose_residuals(W: np.ndarray, P: np.ndarray) -> tuple[float, float, float, float]:
    """Relative residuals of the four Moore-Penrose conditions."""
    W = np.asarray(W, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)

    def rel(x, ref):
        n = np.linalg.norm(ref)
        return float(np.linalg.norm(x) / n) if n > 0 else float(np.linalg.norm(x))

    WP = W @ P
    PW = P @ W
    return (
        rel(WP @ W - W, W),
        rel(PW @ P - P, P),
        rel(WP - WP.T, WP),
        rel(PW - PW.T, PW),
    )


@dataclass(frozen=True)
class SemanticBasisSet:
    """Row i is the latent-space basis vector of vocabulary label i (v x d)."""

    bases: np.ndarray
    source_head_fingerprint: str = ""
    rcond: float = PseudoinverseConfig.rcond
    norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = np.array(self.bases, dtype=np.float64)
        if b.ndim != 2:
            raise ValueError(f"bases must be a v x d matrix, got shape {b.shape}")
        b.setflags(write=False)
        n = np.linalg.norm(b, axis=1)
        n.setflags(write=False)
        object.__setattr__(self, "bases", b)
        object.__setattr__(self, "norms", n)

    @property
    def vocab_size(self) -> int:
        return self.bases.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.bases.shape[1]

    @property
    def zero_rows(self) -> np.ndarray:
        return np.flatnonzero(self.norms == 0.0)

    def unit(self) -> np.ndarray:
        """Unit-normalised rows; zero rows stay zero."""
        safe = np.where(self.norms > 0, self.norms, 1.0)
        return self.bases / safe[:, None]

    def mean_norm(self) -> float:
        return float(self.norms.mean())

    def to_archive(self) -> TensorArchive:
        return TensorArchive(
            (Tensor("bases", self.bases),),
            {"source_fingerprint": self.source_head_fingerprint, "rcond": repr(self.rcond)},
        )

    @classmethod
    def from_archive(cls, archive: TensorArchive) -> "SemanticBasisSet":
        meta = archive.metadata
        return cls(
            archive["bases"].array,
            meta.get("source_fingerprint", ""),
            float(meta.get("rcond", PseudoinverseConfig.rcond)),
        )


def bases_from_head(W: np.ndarray, cfg: PseudoinverseConfig | None = None) -> SemanticBasisSet:
    """Bases for a d x v head: s_i = e_i @ pinv(W), i.e. row i of the pseudoinverse."""
    cfg = cfg or PseudoinverseConfig()
    W = np.asarray(W)
    bases = SemanticBasisSet(pseudoinverse(W, cfg), fingerprint_array(np.asarray(W, np.float32)), cfg.rcond)
    if bases.zero_rows.size:
        logger.warning("%d semantic bases have zero norm", bases.zero_rows.size)
    return bases


def semantic_bases(bundle: ModelBundle, cfg: PseudoinverseConfig | None = None) -> SemanticBasisSet:
    return bases_from_head(bundle.head_matrix(), cfg)


@dataclass(frozen=True)
class ProbabilityVector:
    probs: np.ndarray
    mode: str = COSINE_SOFTMAX

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


def softmax(x: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_vector(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError(f"expected a latent vector, got shape {r.shape}")
    if not np.linalg.norm(r) > 0:
        raise ValueError("representation must be non-zero")
    return r


def cosine_scores(r: np.ndarray, bases: SemanticBasisSet) -> np.ndarray:
    """Cosine similarity of ``r`` to every basis; zero-norm rows score NaN."""
    r = _check_vector(r)
    if r.shape[0] != bases.latent_dim:
        raise ValueError(f"dimension mismatch: r has {r.shape[0]}, bases have {bases.latent_dim}")
    with np.errstate(invalid="ignore", divide="ignore"):
        return (bases.bases @ r) / (bases.norms * np.linalg.norm(r))


def semantic_probabilities(
    r: np.ndarray, bases: SemanticBasisSet, temperature: float = 1.0
) -> ProbabilityVector:
    """softmax(cos(r, s_i) / temperature) over the vocabulary.

    Labels with a zero-norm basis get probability 0 and the rest is renormalised.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    cos = cosine_scores(r, bases)
    valid = bases.norms > 0
    if not valid.all():
        warnings.warn("zero-norm semantic bases excluded from probabilities", RuntimeWarning, stacklevel=2)
        if not valid.any():
            raise ValueError("all semantic bases have zero norm")
    probs = np.zeros(bases.vocab_size)
    probs[valid] = softmax(cos[valid], temperature)
    return ProbabilityVector(probs, COSINE_SOFTMAX)


def logit_probabilities(r: np.ndarray, W: np.ndarray, temperature: float = 1.0) -> ProbabilityVector:
    """Reference distribution softmax(r @ W / temperature) from the d x v head."""
    r = np.asarray(r, dtype=np.float64)
    return ProbabilityVector(softmax(r @ np.asarray(W, np.float64), temperature), LOGIT_SOFTMAX)


def nearest_basis(r: np.ndarray, bases: SemanticBasisSet) -> int:
    """Label with the highest cosine to ``r``; ties go to the lowest index."""
    cos = cosine_scores(r, bases)
    cos = np.where(np.isnan(cos), -np.inf, cos)
    return int(np.argmax(cos))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, np.float64)
    q = np.asarray(q, np.float64)
    mask = p > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
