"""Independent brute-force oracles, deliberately written without reusing any
package internals so they stay a second opinion on the math they check."""

import math
from functools import lru_cache

import numpy as np


def bm25_oracle(query_terms, doc_tokens_list, doc_index, k1=1.2, b=0.75):
    """Okapi BM25 of one document, computed term by term from first principles."""
    n = len(doc_tokens_list)
    doc = doc_tokens_list[doc_index]
    avgdl = sum(len(d) for d in doc_tokens_list) / n
    score = 0.0
    for term in sorted(set(query_terms)):
        tf = doc.count(term)
        if tf == 0:
            continue
        df = sum(1 for d in doc_tokens_list if term in d)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        denom = tf + k1 * (1.0 - b + b * len(doc) / avgdl)
        score += idf * tf * (k1 + 1.0) / denom
    return score


def cosine_oracle(tokens_a, tokens_b, idf=None):
    """Plain tf(-idf) cosine over token lists."""
    idf = idf or {}
    va = {}
    for t in tokens_a:
        va[t] = va.get(t, 0.0) + 1.0
    vb = {}
    for t in tokens_b:
        vb[t] = vb.get(t, 0.0) + 1.0
    va = {t: c * idf.get(t, 1.0) for t, c in va.items()}
    vb = {t: c * idf.get(t, 1.0) for t, c in vb.items()}
    dot = sum(w * vb.get(t, 0.0) for t, w in va.items())
    na = math.sqrt(sum(w * w for w in va.values()))
    nb = math.sqrt(sum(w * w for w in vb.values()))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def levenshtein_oracle(a, b):
    """Recursive memoized edit distance (the package uses an iterative DP)."""

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        cost = 0 if a[i - 1] == b[j - 1] else 1
        return min(rec(i - 1, j) + 1, rec(i, j - 1) + 1, rec(i - 1, j - 1) + cost)

    return rec(len(a), len(b))


def dense_gat_layer_oracle(x, edge_list, head_params, leaky_slope=0.2, mode="concat"):
    """One GAT layer via dense n x n matrices and explicit per-node softmax.

    ``head_params`` is a list of (W, a) with W of shape (d_head, 2*d_in).
    Scoring: a^T LeakyReLU(W [x_i (+) x_j]) for edge j->i; values use the
    source block of W; ELU nonlinearity; heads concatenated or averaged.
    """
    n, d_in = x.shape
    outputs = []
    for w, a in head_params:
        d_head = w.shape[0]
        out = np.zeros((n, d_head))
        for i in range(n):
            in_neighbors = [src for (src, dst) in edge_list if dst == i]
            if not in_neighbors:
                raise ValueError(f"node {i} has no in-neighbors")
            scores = []
            for j in in_neighbors:
                pair = np.concatenate([x[i], x[j]])
                z = w @ pair
                z = np.where(z > 0, z, leaky_slope * z)
                scores.append(a @ z)
            scores = np.array(scores)
            exp = np.exp(scores - scores.max())
            alpha = exp / exp.sum()
            agg = np.zeros(d_head)
            for alpha_j, j in zip(alpha, in_neighbors):
                agg += alpha_j * (w[:, d_in:] @ x[j])
            out[i] = np.where(agg > 0, agg, np.exp(np.minimum(agg, 0.0)) - 1.0)
        outputs.append(out)
    if mode == "concat":
        return np.concatenate(outputs, axis=1)
    return sum(outputs) / len(outputs)


def dense_attention_oracle(x, edge_list, w, a, leaky_slope=0.2):
    """Per-edge attention coefficients in the order of ``edge_list``."""
    n, d_in = x.shape
    alphas = []
    for (src, dst) in edge_list:
        in_neighbors = [s for (s, d) in edge_list if d == dst]
        scores = {}
        for j in in_neighbors:
            pair = np.concatenate([x[dst], x[j]])
            z = w @ pair
            z = np.where(z > 0, z, leaky_slope * z)
            scores[j] = a @ z
        values = np.array(list(scores.values()))
        shift = values.max()
        denom = np.exp(values - shift).sum()
        alphas.append(float(np.exp(scores[src] - shift) / denom))
    return np.array(alphas)


def softmax_ce_oracle(logits_rows, targets):
    """Mean -log softmax probability over the given (row, target) pairs."""
    total = 0.0
    for row, target in zip(logits_rows, targets):
        row = np.asarray(row, dtype=np.float64)
        shifted = row - row.max()
        log_z = math.log(np.exp(shifted).sum())
        total += -(shifted[target] - log_z)
    return total / len(targets)
