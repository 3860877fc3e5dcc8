"""Moving latent representations between modules that share a vocabulary but
not an LM-head, and interpolating per-layer quantities across unequal depths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import (
    SemanticBasisSet,
    cosine_scores,
    kl_divergence,
    nearest_basis,
    pseudoinverse,
    PseudoinverseConfig,
    semantic_probabilities,
)

CALIBRATIONS = ("none", "norm_match", "basis_scale")
WEIGHTINGS = ("least_squares", "probability")


@dataclass(frozen=True)
class TransformPlan:
    """Source/target bases plus how to combine and rescale.

    ``weighting="least_squares"`` picks combination weights on the unit target
    bases so the result reproduces the source cosine profile as closely as the
    target space allows; ``"probability"`` uses the probabilities themselves.
    """

    source_bases: SemanticBasisSet
    target_bases: SemanticBasisSet
    temperature: float = 1.0
    calibration: str = "norm_match"
    weighting: str = "least_squares"

    def __post_init__(self):
        if self.source_bases.vocab_size != self.target_bases.vocab_size:
            raise ValueError(
                f"vocabulary mismatch: {self.source_bases.vocab_size} vs {self.target_bases.vocab_size}"
            )
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.calibration not in CALIBRATIONS:
            raise ValueError(f"unknown calibration {self.calibration!r}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        unit = self.target_bases.unit()
        object.__setattr__(self, "_target_unit", unit)
        # pinv(U) @ z equals U^T (U U^T)^+ z: a combination of the unit target
        # bases whose cosine profile is the least-squares fit to z.
        object.__setattr__(self, "_target_pinv", pseudoinverse(unit, PseudoinverseConfig(rcond=1e-10)))

    def combine(self, r_x: np.ndarray) -> np.ndarray:
        """Uncalibrated target representation."""
        if self.weighting == "probability":
            p = semantic_probabilities(r_x, self.source_bases, self.temperature).probs
            return p @ self._target_unit
        cos = np.nan_to_num(cosine_scores(r_x, self.source_bases), nan=0.0)
        return self._target_pinv @ cos


def preserve_transform(r_x: np.ndarray, plan: TransformPlan) -> np.ndarray:
    r_x = np.asarray(r_x, dtype=np.float64)
    if not np.linalg.norm(r_x) > 0:
        raise ValueError("representation must be non-zero")
    raw = plan.combine(r_x)
    return calibrate_magnitude(raw, r_x, plan)


def calibrate_magnitude(r_y_raw: np.ndarray, r_x: np.ndarray, plan: TransformPlan) -> np.ndarray:
    r_y_raw = np.asarray(r_y_raw, dtype=np.float64)
    if plan.calibration == "none":
        return r_y_raw
    n_raw = float(np.linalg.norm(r_y_raw))
    if n_raw == 0.0:
        raise ValueError(f"cannot apply {plan.calibration} to a zero vector")
    if plan.calibration == "basis_scale":
        return r_y_raw * plan.target_bases.mean_norm()
    # norm_match: |r_y| / mean|s_y| == |r_x| / mean|s_x|
    target = float(np.linalg.norm(r_x)) * plan.target_bases.mean_norm() / plan.source_bases.mean_norm()
    return r_y_raw * (target / n_raw)


def transform_batch(reps: np.ndarray, plan: TransformPlan) -> tuple[np.ndarray, list[dict]]:
    """Transform rows of ``reps`` and report per-row KL and argmax agreement."""
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[1] != plan.source_bases.latent_dim:
        raise ValueError("reps must be n x d_source")
    out = np.empty((reps.shape[0], plan.target_bases.latent_dim))
    rows = []
    for i, r in enumerate(reps):
        y = preserve_transform(r, plan)
        out[i] = y
        p = semantic_probabilities(r, plan.source_bases, plan.temperature).probs
        q = semantic_probabilities(y, plan.target_bases, plan.temperature).probs
        rows.append(
            {
                "row": i,
                "kl": kl_divergence(p, q),
                "argmax_source": int(np.argmax(p)),
                "argmax_target": nearest_basis(y, plan.target_bases),
            }
        )
    return out, rows


# --------------------------------------------------------------------------
# Depth interpolation


@dataclass(frozen=True)
class DepthMap:
    source_depth: int
    target_depth: int
    positions: tuple[float, ...]


def depth_map(source_depth: int, target_depth: int) -> DepthMap:
    """Fractional source-layer position for each target layer."""
    if source_depth < 1 or target_depth < 1:
        raise ValueError("depths must be >= 1")
    if target_depth == 1:
        positions = ((source_depth - 1) / 2,)
    else:
        positions = tuple(j * (source_depth - 1) / (target_depth - 1) for j in range(target_depth))
    return DepthMap(source_depth, target_depth, positions)


def interpolate_layer_semantics(per_layer_vectors: Sequence[np.ndarray], position: float) -> np.ndarray:
    n = len(per_layer_vectors)
    if n == 0:
        raise ValueError("need at least one layer")
    if not 0 <= position <= n - 1:
        raise ValueError(f"position {position} outside [0, {n - 1}]")
    lo = math.floor(position)
    t = position - lo
    x_lo = np.asarray(per_layer_vectors[lo], dtype=np.float64)
    if t == 0:
        return x_lo.copy()
    x_hi = np.asarray(per_layer_vectors[lo + 1], dtype=np.float64)
    return (1 - t) * x_lo + t * x_hi


def resample_layers(per_layer_vectors: Sequence[np.ndarray], target_depth: int) -> list[np.ndarray]:
    dm = depth_map(len(per_layer_vectors), target_depth)
    return [interpolate_layer_semantics(per_layer_vectors, p) for p in dm.positions]
