"""Data-free merge against a pivot: select high-variance entries, weight each
model by its selected squared magnitude, erase sign-minority entries, and add
the weighted deltas back onto the pivot.

Deltas and all intermediate arithmetic are float64; the merged model is cast
back to float32 at the end. Sums over models run in ascending model-id order
so that reordering the inputs does not change the result.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .archive import BundleError, ModelBundle, check_congruent
from .kernels import erase_signs

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("sum_to_one", "mean_one", "raw")
ERASE_POLICIES = ("majority_sign", "off")
TIE_POLICIES = ("drop_all", "keep_larger_magnitude_side")


@dataclass(frozen=True, eq=False)
class FusionVector:
    deltas: dict[str, np.ndarray]
    source_model_id: str = ""


@dataclass(frozen=True, eq=False)
class SelectionMask:
    masks: dict[str, np.ndarray]
    tau: float

    def retained(self) -> dict[str, int]:
        return {k: int(m.sum()) for k, m in self.masks.items()}


@dataclass(frozen=True)
class MergeCoefficients:
    etas: tuple[float, ...]
    normalization: str = "sum_to_one"
    raw: tuple[float, ...] = ()


@dataclass(frozen=True)
class MergeRecipe:
    tau: float = 20.0
    normalization: str = "sum_to_one"
    erase: str = "majority_sign"
    tie_policy: str = "drop_all"

    def __post_init__(self):
        check_tau(self.tau)
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.erase not in ERASE_POLICIES:
            raise ValueError(f"unknown erase policy {self.erase!r}")
        if self.tie_policy not in TIE_POLICIES:
            raise ValueError(f"unknown tie policy {self.tie_policy!r}")


def check_tau(tau: float) -> None:
    if not (isinstance(tau, (int, float)) and 0 < tau <= 100):
        raise ValueError(f"tau must lie in (0, 100], got {tau!r}")


def retained_count(n: int, tau: float) -> int:
    """ceil(tau% of n), computed on the decimal value of tau."""
    return min(n, math.ceil(Fraction(str(tau)) * n / 100))


def fusion_vectors(models: Sequence[ModelBundle], pivot: ModelBundle) -> list[FusionVector]:
    if not models:
        raise ValueError("need at least one model")
    base = {k: v.astype(np.float64) for k, v in pivot.parameters().items()}
    out = []
    for m in models:
        check_congruent(pivot, m)
        params = m.parameters()
        out.append(FusionVector({k: params[k].astype(np.float64) - base[k] for k in base}, m.model_id))
    return out


def _tensor_names(deltas: Sequence[FusionVector]) -> list[str]:
    if not deltas:
        raise ValueError("empty delta list")
    names = list(deltas[0].deltas)
    for fv in deltas[1:]:
        if list(fv.deltas) != names:
            raise BundleError("fusion vectors have different tensor names")
        for k in names:
            if fv.deltas[k].shape != deltas[0].deltas[k].shape:
                raise BundleError(f"shape mismatch for {k!r}")
    return names


def elementwise_variance(stack: Sequence[np.ndarray]) -> np.ndarray:
    """Population variance across models, accumulated model by model."""
    k = len(stack)
    mean = np.zeros_like(stack[0], dtype=np.float64)
    for x in stack:
        mean = mean + x
    mean = mean / k
    acc = np.zeros_like(mean)
    for x in stack:
        acc = acc + (x - mean) * (x - mean)
    return acc / k


def top_fraction_mask(score: np.ndarray, tau: float) -> np.ndarray:
    """Keep the ceil(tau%) highest scores; ties go to the lower flat index."""
    flat = score.reshape(-1)
    keep = retained_count(flat.size, tau)
    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:keep]] = True
    return mask.reshape(score.shape)


def select_top_variance(deltas: Sequence[FusionVector], tau: float) -> SelectionMask:
    """Per tensor, keep the top-tau% elements by variance across the K deltas.

    With a single delta the variance is identically zero, so |delta| is ranked instead.
    """
    check_tau(tau)
    names = _tensor_names(deltas)
    masks = {}
    for name in names:
        stack = [fv.deltas[name] for fv in deltas]
        score = np.abs(stack[0]) if len(stack) == 1 else elementwise_variance(stack)
        masks[name] = top_fraction_mask(score, tau)
    return SelectionMask(masks, float(tau))


def normalize_coefficients(raw: Sequence[float], normalization: str) -> tuple[float, ...]:
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    raw = [float(x) for x in raw]
    if all(x == 0.0 for x in raw):
        warnings.warn("all merge coefficients are zero; using uniform weights", RuntimeWarning, stacklevel=2)
        raw = [1.0] * len(raw)
    if normalization == "sum_to_one":
        total = math.fsum(raw)
        return tuple(x / total for x in raw)
    if normalization == "mean_one":
        mean = math.fsum(raw) / len(raw)
        return tuple(x / mean for x in raw)
    return tuple(raw)


def compute_coefficients(
    deltas: Sequence[FusionVector], mask: SelectionMask, normalization: str = "sum_to_one"
) -> MergeCoefficients:
    """Weight each model by the sum of its squared selected entries over all tensors.

    Sums use ``math.fsum`` so the result is exactly rounded and order-free.
    """
    names = _tensor_names(deltas)
    if set(names) != set(mask.masks):
        raise ValueError("mask does not cover the same tensors as the deltas")
    raw = []
    for fv in deltas:
        parts = []
        for name in names:
            sel = fv.deltas[name][mask.masks[name]]
            parts.extend((sel * sel).tolist())
        raw.append(math.fsum(parts))
    return MergeCoefficients(normalize_coefficients(raw, normalization), normalization, tuple(raw))


def erase_sign_minority(
    deltas: Sequence[FusionVector],
    mask: SelectionMask,
    tie_policy: str = "drop_all",
    erase: str = "majority_sign",
) -> list[FusionVector]:
    """Zero unselected entries and, per element, entries whose sign disagrees
    with the majority sign of the selected entries. Zeros vote for nobody.
    """
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"unknown tie policy {tie_policy!r}")
    if erase not in ERASE_POLICIES:
        raise ValueError(f"unknown erase policy {erase!r}")
    names = _tensor_names(deltas)
    pruned: list[dict[str, np.ndarray]] = [{} for _ in deltas]
    for name in names:
        shape = deltas[0].deltas[name].shape
        m = mask.masks[name]
        if erase == "off":
            for k, fv in enumerate(deltas):
                pruned[k][name] = np.where(m, fv.deltas[name], 0.0)
            continue
        stack = np.stack([fv.deltas[name].reshape(-1) for fv in deltas])
        out = erase_signs(stack, m.reshape(-1), tie_policy == "keep_larger_magnitude_side")
        for k in range(len(deltas)):
            pruned[k][name] = out[k].reshape(shape)
    return [FusionVector(p, fv.source_model_id) for p, fv in zip(pruned, deltas)]


def merge_order(ids: Sequence[str]) -> list[int]:
    """Indices sorted by model id; equal ids keep input order."""
    return sorted(range(len(ids)), key=lambda i: ids[i])


def apply_merge(
    pivot: ModelBundle, deltas_pruned: Sequence[FusionVector], etas: MergeCoefficients | Sequence[float]
) -> ModelBundle:
    """theta_merge = theta_pivot + sum_k eta_k * delta'_k."""
    etas = etas.etas if isinstance(etas, MergeCoefficients) else tuple(etas)
    if len(etas) != len(deltas_pruned):
        raise ValueError(f"{len(etas)} coefficients for {len(deltas_pruned)} deltas")
    base = pivot.parameters()
    order = merge_order([fv.source_model_id for fv in deltas_pruned])
    merged = {}
    for name, theta in base.items():
        acc = np.zeros(theta.shape, dtype=np.float64)
        for k in order:
            d = deltas_pruned[k].deltas.get(name)
            if d is None or d.shape != theta.shape:
                raise BundleError(f"delta for {name!r} missing or mis-shaped")
            acc = acc + etas[k] * d
        out = theta.astype(np.float64) + acc
        if not np.isfinite(out).all():
            raise ValueError(f"merged tensor {name!r} has non-finite values")
        merged[name] = out.astype(np.float32)
    meta = dict(pivot.metadata)
    meta["model_id"] = "merged"
    return pivot.with_parameters(merged, meta)


@dataclass
class MergeResult:
    model: ModelBundle
    coefficients: MergeCoefficients
    report: dict = field(default_factory=dict)


def merge(models: Sequence[ModelBundle], pivot: ModelBundle, recipe: MergeRecipe | None = None) -> MergeResult:
    recipe = recipe or MergeRecipe()
    deltas = fusion_vectors(models, pivot)
    mask = select_top_variance(deltas, recipe.tau)
    coeffs = compute_coefficients(deltas, mask, recipe.normalization)
    pruned = erase_sign_minority(deltas, mask, recipe.tie_policy, recipe.erase)
    merged = apply_merge(pivot, pruned, coeffs)

    per_tensor = {}
    for name, m in mask.masks.items():
        selected_nonzero = sum(int(np.count_nonzero(fv.deltas[name][m])) for fv in deltas)
        surviving = sum(int(np.count_nonzero(fv.deltas[name])) for fv in pruned)
        per_tensor[name] = {
            "elements": int(m.size),
            "retained": int(m.sum()),
            "erased": selected_nonzero - surviving,
        }
    report = {
        "recipe": {
            "tau": recipe.tau,
            "normalization": recipe.normalization,
            "erase": recipe.erase,
            "tie_policy": recipe.tie_policy,
        },
        "models": [m.model_id for m in models],
        "etas": list(coeffs.etas),
        "raw_coefficients": list(coeffs.raw),
        "tensors": per_tensor,
        "conflicts": sum(t["erased"] for t in per_tensor.values()),
    }
    logger.info("merged %d models, etas=%s, erased=%d", len(models), coeffs.etas, report["conflicts"])
    return MergeResult(merged, coeffs, report)

