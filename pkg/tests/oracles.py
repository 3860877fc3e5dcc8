"""Independent reference implementations used only by the tests.

They are written straight from the definitions, element by element, and do
not import the code paths they check.
"""

import math
from decimal import Decimal

import numpy as np


# ---------------------------------------------------------------- alignment

def enumerate_alignments(n, m):
    """Every legal tiling of [0, n) x [0, m) by 1-1, 1-k and k-1 links."""
    if n == 0 and m == 0:
        yield ()
        return
    if n == 0 or m == 0:
        return
    for k in range(1, m + 1):
        for rest in enumerate_alignments(n - 1, m - k):
            yield ((1, k),) + rest
    for k in range(2, n + 1):
        for rest in enumerate_alignments(n - k, m - 1):
            yield ((k, 1),) + rest


def brute_force_alignment_cost(src_surf, piv_surf, sub=1.0, split=1.0, merge=1.0, src_ids=None, piv_ids=None):
    """Minimum cost over all alignments. Surfaces may be None (ids only)."""
    n = len(src_surf) if src_surf is not None else len(src_ids)
    m = len(piv_surf) if piv_surf is not None else len(piv_ids)
    best = math.inf
    for tiling in enumerate_alignments(n, m):
        i = j = 0
        total = 0.0
        for ns, np_ in tiling:
            if src_surf is not None and piv_surf is not None:
                same = "".join(src_surf[i:i + ns]) == "".join(piv_surf[j:j + np_])
            else:
                same = ns == 1 and np_ == 1 and src_ids[i] == piv_ids[j]
            total += (0.0 if same else sub) + split * (np_ - 1) + merge * (ns - 1)
            i += ns
            j += np_
        best = min(best, total)
    return best


# ---------------------------------------------------------------- merge

def literal_merge(models, pivot, ids, tau, tie_policy="drop_all"):
    """Straight-line pivot merge on dicts of name -> float32 array.

    Returns (merged dict of float32 arrays, etas).
    """
    names = list(pivot)
    K = len(models)
    deltas = [{} for _ in range(K)]
    masks = {}
    for name in names:
        flat_p = [float(x) for x in pivot[name].reshape(-1)]
        n = len(flat_p)
        for k in range(K):
            flat_m = [float(x) for x in models[k][name].reshape(-1)]
            deltas[k][name] = [flat_m[e] - flat_p[e] for e in range(n)]
        score = []
        for e in range(n):
            xs = [deltas[k][name][e] for k in range(K)]
            if K == 1:
                score.append(abs(xs[0]))
                continue
            s = 0.0
            for x in xs:
                s = s + x
            mean = s / K
            acc = 0.0
            for x in xs:
                acc = acc + (x - mean) * (x - mean)
            score.append(acc / K)
        keep = math.ceil(Decimal(str(tau)) * n / 100)
        ranked = sorted(range(n), key=lambda e: (-score[e], e))
        masks[name] = set(ranked[:keep])

    raw = []
    for k in range(K):
        sq = []
        for name in names:
            for e in sorted(masks[name]):
                d = deltas[k][name][e]
                sq.append(d * d)
        raw.append(math.fsum(sq))
    if all(r == 0 for r in raw):
        raw = [1.0] * K
    total = math.fsum(raw)
    etas = [r / total for r in raw]

    order = sorted(range(K), key=lambda k: ids[k])
    merged = {}
    for name in names:
        flat_p = [float(x) for x in pivot[name].reshape(-1)]
        out = []
        for e in range(len(flat_p)):
            xs = [deltas[k][name][e] if e in masks[name] else 0.0 for k in range(K)]
            kept = brute_force_majority(xs, tie_policy)
            acc = 0.0
            for k in order:
                acc = acc + etas[k] * kept[k]
            out.append(flat_p[e] + acc)
        merged[name] = np.array(out, dtype=np.float64).astype(np.float32).reshape(pivot[name].shape)
    return merged, etas


def brute_force_majority(values, tie_policy="drop_all"):
    """Keep the entries whose sign wins the vote among nonzero entries."""
    pos = [v for v in values if v > 0]
    neg = [v for v in values if v < 0]
    if len(pos) > len(neg):
        winner = 1
    elif len(neg) > len(pos):
        winner = -1
    elif tie_policy == "keep_larger_magnitude_side" and sum(pos) != -sum(neg):
        winner = 1 if sum(pos) > -sum(neg) else -1
    else:
        winner = 0
    return [v if (winner == 1 and v > 0) or (winner == -1 and v < 0) else 0.0 for v in values]


# ---------------------------------------------------------------- linear algebra

def normal_equations_basis(W, i):
    """argmin_x ||x W - e_i||: solve (W W^T) x^T = W e_i."""
    W = np.asarray(W, dtype=np.float64)
    return np.linalg.solve(W @ W.T, W[:, i])


def cosine_softmax_oracle(r, bases, temperature):
    out = []
    for s in bases:
        dot = sum(float(a) * float(b) for a, b in zip(r, s))
        out.append(dot / (math.sqrt(sum(float(a) ** 2 for a in r)) * math.sqrt(sum(float(b) ** 2 for b in s))))
    mx = max(out)
    ex = [math.exp((c - mx) / temperature) for c in out]
    z = sum(ex)
    return [e / z for e in ex]
