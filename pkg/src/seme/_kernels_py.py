"""Pure-Python implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is missing or when
``SEME_PURE_PYTHON=1``. Must agree exactly with ``_kernels.pyx``.
"""

import numpy as np

INF = float("inf")


def _span_equal(s_codes, s_off, a, b, p_codes, p_off, c, d):
    # source tokens [a, b) vs pivot tokens [c, d) as concatenated code strings
    s0, s1 = s_off[a], s_off[b]
    p0, p1 = p_off[c], p_off[d]
    if s1 - s0 != p1 - p0:
        return False
    return s_codes[s0:s1] == p_codes[p0:p1]


def align_table(s_codes, s_off, p_codes, p_off, sub, split, merge, max_span):
    """Suffix DP for span alignment.

    ``cost[i, j]`` is the minimum cost of aligning source[i:] with pivot[j:].
    ``choice[i, j]`` encodes the first link of an optimal alignment: ``k > 0``
    is one source token to ``k`` pivot tokens, ``-k`` is ``k`` source tokens to
    one pivot token. Candidates are tried one-to-one first, then splits, then
    merges, each by increasing span, and only a strictly better cost replaces
    the incumbent.
    """
    s_codes = [int(x) for x in s_codes]
    p_codes = [int(x) for x in p_codes]
    s_off = [int(x) for x in s_off]
    p_off = [int(x) for x in p_off]
    n = len(s_off) - 1
    m = len(p_off) - 1
    lim = max_span if max_span > 0 else max(n, m)
    cost = [[INF] * (m + 1) for _ in range(n + 1)]
    choice = [[0] * (m + 1) for _ in range(n + 1)]
    cost[n][m] = 0.0
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            best = cost[i + 1][j + 1]
            if best < INF:
                best += 0.0 if _span_equal(s_codes, s_off, i, i + 1, p_codes, p_off, j, j + 1) else sub
            arg = 1
            for k in range(2, min(lim, m - j) + 1):
                rest = cost[i + 1][j + k]
                if rest == INF:
                    continue
                c = rest + split * (k - 1)
                if not _span_equal(s_codes, s_off, i, i + 1, p_codes, p_off, j, j + k):
                    c += sub
                if c < best:
                    best, arg = c, k
            for k in range(2, min(lim, n - i) + 1):
                rest = cost[i + k][j + 1]
                if rest == INF:
                    continue
                c = rest + merge * (k - 1)
                if not _span_equal(s_codes, s_off, i, i + k, p_codes, p_off, j, j + 1):
                    c += sub
                if c < best:
                    best, arg = c, -k
            cost[i][j] = best
            choice[i][j] = arg
    return np.array(cost, dtype=np.float64), np.array(choice, dtype=np.int64)


def levenshtein(a, b, max_dist=-1):
    """Unit-cost edit distance; with ``max_dist >= 0`` returns at most ``max_dist + 1``."""
    if len(a) < len(b):
        a, b = b, a
    la, lb = len(a), len(b)
    if max_dist >= 0 and la - lb > max_dist:
        return max_dist + 1
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        ca = a[i - 1]
        row_min = i
        for j in range(1, lb + 1):
            v = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != b[j - 1]))
            cur[j] = v
            if v < row_min:
                row_min = v
        if max_dist >= 0 and row_min > max_dist:
            return max_dist + 1
        prev = cur
    d = prev[lb]
    if max_dist >= 0 and d > max_dist:
        return max_dist + 1
    return d


def erase_signs(stack, mask, keep_larger):
    """Sign election over a K x n stack of deltas.

    Unselected columns are zeroed. In selected columns the majority sign is
    the sign of the summed signs; entries of the other sign are zeroed. On a
    tie every entry is zeroed, unless ``keep_larger`` keeps the side with the
    larger total magnitude (still zeroing on an exact magnitude tie).
    """
    stack = np.asarray(stack, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    sg = np.sign(stack)
    vote = sg.sum(axis=0)
    elected = np.sign(vote)
    if keep_larger:
        pos = np.where(stack > 0, stack, 0.0).sum(axis=0)
        neg = np.where(stack < 0, -stack, 0.0).sum(axis=0)
        tie = vote == 0
        elected = np.where(tie, np.sign(pos - neg), elected)
    keep = (sg == elected) & (elected != 0) & mask
    return np.where(keep, stack, 0.0)
