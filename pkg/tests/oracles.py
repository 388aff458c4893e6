"""Independent reference implementations used as test oracles.

Nothing in here calls the production code paths it is checking: gradients
come from central finite differences over the loss evaluated forward-only,
and average precision comes from an exhaustive O(n^2) precision-at-rank
loop over plain Python lists.
"""

import numpy as np

from fusescan.fusion_head import forward_batch, mean_bce_with_logits


def loss_at(params, features, labels) -> float:
    logits = forward_batch(params, features)
    return mean_bce_with_logits(logits, labels)


def finite_difference_grads(params, features, labels, h=1e-5):
    """Central-difference gradients of the mean BCE loss for every parameter."""
    weight_grads = []
    bias_grads = []
    for arrays, grads in ((params.weights, weight_grads), (params.biases, bias_grads)):
        for arr in arrays:
            g = np.zeros_like(arr, dtype=np.float64)
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                original = flat[j]
                flat[j] = original + h
                hi = loss_at(params, features, labels)
                flat[j] = original - h
                lo = loss_at(params, features, labels)
                flat[j] = original
                gflat[j] = (hi - lo) / (2 * h)
            grads.append(g)
    return weight_grads, bias_grads


def relative_error(analytic, numeric, floor=1e-4) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor) over two gradient sets."""
    worst = 0.0
    for a_list, n_list in zip(analytic, numeric):
        for a, n in zip(a_list, n_list):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def brute_force_average_precision(scores, labels) -> float:
    """Mean precision at each positive's rank, computed the slow obvious way.

    Sorts by descending score with ties kept in input order, then for each
    positive at rank k recounts the positives in the top k from scratch.
    """
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    precisions = []
    for k in range(1, len(order) + 1):
        if labels[order[k - 1]] == 1:
            top = [labels[order[j]] for j in range(k)]
            precisions.append(sum(top) / k)
    return sum(precisions) / sum(labels)
