"""Resolution of a representation into components along semantic bases, and
the parallelism check between a representation and the resultant of its components.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .archive import ModelBundle
from .basis import PseudoinverseConfig, SemanticBasisSet, semantic_bases

logger = logging.getLogger(__name__)

DISTRIBUTIONS = ("gaussian", "uniform")


def project(r: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Orthogonal projection of r onto the line spanned by s."""
    r = np.asarray(r, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    ss = float(s @ s)
    if ss == 0.0:
        raise ValueError("cannot project onto a zero vector")
    return (float(r @ s) / ss) * s


@dataclass(frozen=True)
class ComponentSet:
    components: np.ndarray  # v x d, row i = proj(r, s_i)
    source: np.ndarray
    skipped: tuple[int, ...] = ()

    def __len__(self) -> int:
        return self.components.shape[0]


def decompose(r: np.ndarray, bases: SemanticBasisSet | np.ndarray) -> ComponentSet:
    """Project ``r`` onto every basis row. Zero-norm rows give zero components."""
    r = np.asarray(r, dtype=np.float64)
    if not np.linalg.norm(r) > 0:
        raise ValueError("representation must be non-zero")
    B = bases.bases if isinstance(bases, SemanticBasisSet) else np.asarray(bases, np.float64)
    sq = np.einsum("ij,ij->i", B, B)
    zero = sq == 0.0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero-norm bases skipped", RuntimeWarning, stacklevel=2)
    coef = np.divide(B @ r, sq, out=np.zeros_like(sq), where=~zero)
    comps = coef[:, None] * B
    return ComponentSet(comps, r.copy(), tuple(int(i) for i in np.flatnonzero(zero)))


def resultant(components: ComponentSet | np.ndarray) -> np.ndarray:
    c = components.components if isinstance(components, ComponentSet) else np.asarray(components, np.float64)
    if c.shape[0] == 0:
        raise ValueError("empty component set")
    return c.sum(axis=0)


def parallelism_score(r: np.ndarray, resultant_vec: np.ndarray) -> float:
    r = np.asarray(r, dtype=np.float64)
    x = np.asarray(resultant_vec, dtype=np.float64)
    nr, nx = np.linalg.norm(r), np.linalg.norm(x)
    if not (nr > 0 and nx > 0):
        raise ValueError("parallelism undefined for zero vectors")
    return float(np.clip((r @ x) / (nr * nx), -1.0, 1.0))


def _draw(rng: np.random.Generator, distribution: str, shape) -> np.ndarray:
    if distribution == "gaussian":
        return rng.standard_normal(shape)
    if distribution == "uniform":
        return rng.uniform(-1.0, 1.0, shape)
    raise ValueError(f"unknown distribution {distribution!r}; expected one of {DISTRIBUTIONS}")


@dataclass
class ValidationReport:
    parallelism_semantic: float
    parallelism_semantic_std: float
    parallelism_random: float
    parallelism_random_std: float
    trials: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self, column: str = "parallelism_semantic") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["trial", "parallelism"])
        for rec in self.trials:
            w.writerow([rec["trial"], repr(rec[column])])
        return buf.getvalue()


def _trial(bases: np.ndarray, t: int, seed: int, rep_distribution: str,
           random_basis_distribution: str, activations: np.ndarray | None) -> dict:
    rng = np.random.default_rng([seed, t])
    v, d = bases.shape
    if activations is None:
        r = _draw(rng, rep_distribution, d)
    else:
        r = np.asarray(activations[rng.integers(activations.shape[0])], np.float64)
    random_bases = _draw(rng, random_basis_distribution, (v, d))
    return {
        "trial": t,
        "parallelism_semantic": parallelism_score(r, resultant(decompose(r, bases))),
        "parallelism_random": parallelism_score(r, resultant(decompose(r, random_bases))),
    }


def run_validation(
    bundle: ModelBundle | SemanticBasisSet,
    trials: int,
    seed: int,
    random_basis_distribution: str = "gaussian",
    representation_distribution: str = "gaussian",
    activations: np.ndarray | None = None,
    cfg: PseudoinverseConfig | None = None,
    threads: int = 1,
) -> ValidationReport:
    """Compare parallelism of r with the resultant over true vs random bases.

    Trial ``t`` draws from an RNG seeded with ``(seed, t)``, so the report does
    not depend on ``threads``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    for dist in (random_basis_distribution, representation_distribution):
        if dist not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {dist!r}")
    bases = bundle if isinstance(bundle, SemanticBasisSet) else semantic_bases(bundle, cfg)
    B = bases.bases
    if activations is not None:
        activations = np.asarray(activations, np.float64)
        if activations.ndim != 2 or activations.shape[1] != B.shape[1]:
            raise ValueError("activations must be n x d with the bundle's latent dimension")

    def one(t):
        return _trial(B, t, seed, representation_distribution, random_basis_distribution, activations)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(trials)))
    else:
        records = [one(t) for t in range(trials)]

    sem = np.array([r["parallelism_semantic"] for r in records])
    rnd = np.array([r["parallelism_random"] for r in records])
    report = ValidationReport(
        parallelism_semantic=float(sem.mean()),
        parallelism_semantic_std=float(sem.std()),
        parallelism_random=float(rnd.mean()),
        parallelism_random_std=float(rnd.std()),
        trials=records,
        config={
            "vocab_size": int(B.shape[0]),
            "latent_dim": int(B.shape[1]),
            "trials": int(trials),
            "seed": int(seed),
            "random_basis_distribution": random_basis_distribution,
            "representation_distribution": (
                "activations" if activations is not None else representation_distribution
            ),
            "source_fingerprint": bases.source_head_fingerprint,
        },
    )
    logger.info(
        "parallelism semantic=%.4f (sd %.4f) random=%.4f (sd %.4f)",
        report.parallelism_semantic,
        report.parallelism_semantic_std,
        report.parallelism_random,
        report.parallelism_random_std,
    )
    return report
