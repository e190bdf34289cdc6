"""Reference implementation of the hot kernels.

Every function here has a twin in ``_fast.pyx`` that must return identical
results for identical inputs, bit for bit. The random stream is a
splitmix64 generator carried in plain Python integers so both backends
draw the same numbers.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Tiny counter-based generator shared by both kernel backends."""

    __slots__ = ("state",)

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def bounded(self, n):
        """Uniform integer in [0, n) by rejection; no modulo bias."""
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next()
            if r >= threshold:
                return r % n


def _take(rng, cand, k):
    # partial Fisher-Yates over a private copy of the candidate list
    cand = list(cand)
    a = len(cand)
    for i in range(k):
        j = i + rng.bounded(a - i)
        cand[i], cand[j] = cand[j], cand[i]
    return cand[:k]


def draw_episode(masks, pool, allowed, class_bits, k_trn, k_tst, n_notfinding, seed):
    """Fill the train and test splits of one episode.

    Parameters
    ----------
    masks : uint64 array
        Label bitmask of every dataset row.
    pool : int64 array
        Dataset rows the episode may draw from, in a fixed order.
    allowed : int
        Bitmask of the episode classes; rows with any other label are
        never eligible.
    class_bits : int32 array
        Bit positions of the episode classes in processing order.
    k_trn, k_tst : int
        Minimum positives per class in each split.
    n_notfinding : int
        All-negative rows appended to each split.
    seed : int
        64-bit seed of the sampling stream.

    Returns
    -------
    trn, tst : int64 arrays of dataset rows, in insertion order
    present : int64 array, shape (2, n_classes)
        Positives already in the split when each class was visited.
    failure : tuple or None
        ``(split, class_position, needed, available)`` when the pool ran
        dry; class_position is -1 for the not-finding draw.
    """
    masks = np.asarray(masks, dtype=np.uint64)
    pool = np.asarray(pool, dtype=np.int64)
    n_cls = len(class_bits)
    rng = SplitMix64(seed)
    pool_masks = masks[pool]
    avail = (pool_masks & np.uint64(~int(allowed) & _MASK64)) == 0
    present = np.zeros((2, n_cls), dtype=np.int64)
    splits = []
    for s, k in enumerate((k_trn, k_tst)):
        chosen = []
        for ci in range(n_cls):
            bit = np.uint64(1 << int(class_bits[ci]))
            have = int(np.count_nonzero(masks[np.asarray(chosen, dtype=np.int64)] & bit)) if chosen else 0
            present[s, ci] = have
            missing = k - have
            if missing <= 0:
                continue
            cand = np.flatnonzero(avail & ((pool_masks & bit) != 0))
            if len(cand) < missing:
                return None, None, present, (s, ci, missing, len(cand))
            picked = _take(rng, cand.tolist(), missing)
            avail[picked] = False
            chosen.extend(int(pool[p]) for p in picked)
        if n_notfinding > 0:
            cand = np.flatnonzero(avail & (pool_masks == 0))
            if len(cand) < n_notfinding:
                return None, None, present, (s, -1, n_notfinding, len(cand))
            picked = _take(rng, cand.tolist(), n_notfinding)
            avail[picked] = False
            chosen.extend(int(pool[p]) for p in picked)
        splits.append(np.asarray(chosen, dtype=np.int64))
    return splits[0], splits[1], present, None


def auc_rank(scores, labels):
    """Mann-Whitney AUC through midranks.

    Returns ``(auc, n_pos, n_neg)``; auc is NaN when either class is empty.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n = scores.shape[0]
    n_pos = int(np.count_nonzero(labels))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan"), n_pos, n_neg
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    # tie groups: start index of each run of equal scores
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], n]
    midrank = (starts + 1 + ends) / 2.0
    ranks = np.repeat(midrank, ends - starts)
    rank_sum = float(np.sum(ranks[labels[order]]))
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg), n_pos, n_neg
