# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pure.py``. Same inputs, same outputs."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, int32_t, uint8_t

cnp.import_array()


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    state[0] += 0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _bounded(uint64_t* state, uint64_t n) noexcept nogil:
    cdef uint64_t threshold = (0 - n) % n
    cdef uint64_t r
    while True:
        r = _next(state)
        if r >= threshold:
            return r % n


def draw_episode(masks, pool, allowed, class_bits, int64_t k_trn, int64_t k_tst,
                 int64_t n_notfinding, seed):
    cdef const uint64_t[::1] m = np.ascontiguousarray(masks, dtype=np.uint64)
    cdef const int64_t[::1] p = np.ascontiguousarray(pool, dtype=np.int64)
    cdef const int32_t[::1] bits = np.ascontiguousarray(class_bits, dtype=np.int32)
    cdef uint64_t allow = <uint64_t>int(allowed)
    cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t n_pool = p.shape[0]
    cdef Py_ssize_t n_cls = bits.shape[0]
    cdef Py_ssize_t n_lists = n_cls + 1  # last bucket holds not-finding rows

    present_arr = np.zeros((2, n_cls), dtype=np.int64)
    cdef int64_t[:, ::1] present = present_arr
    avail_arr = np.zeros(n_pool, dtype=np.uint8)
    cdef uint8_t[::1] avail = avail_arr

    # bucket eligible pool positions per class, preserving pool order
    start_arr = np.zeros(n_lists + 1, dtype=np.int64)
    cdef int64_t[::1] start = start_arr
    cdef Py_ssize_t i, j, ci, s, a, tmp, b
    cdef uint64_t mask_off = ~allow
    cdef uint64_t row
    for i in range(n_pool):
        row = m[p[i]]
        if row & mask_off:
            continue
        avail[i] = 1
        if row == 0:
            start[n_lists] += 1
            continue
        for ci in range(n_cls):
            if row & ((<uint64_t>1) << bits[ci]):
                start[ci + 1] += 1
    for b in range(n_lists):
        start[b + 1] += start[b]
    fill_arr = start_arr[:n_lists].copy()
    cdef int64_t[::1] fill = fill_arr
    bucket_arr = np.empty(max(start[n_lists], 1), dtype=np.int64)
    cdef int64_t[::1] bucket = bucket_arr
    for i in range(n_pool):
        if not avail[i]:
            continue
        row = m[p[i]]
        if row == 0:
            # not-finding bucket is the final slot
            bucket[fill[n_lists - 1]] = i
            fill[n_lists - 1] += 1
            continue
        for ci in range(n_cls):
            if row & ((<uint64_t>1) << bits[ci]):
                bucket[fill[ci]] = i
                fill[ci] += 1
    cand_arr = np.empty(max(bucket_arr.shape[0], 1), dtype=np.int64)
    cdef int64_t[::1] cand = cand_arr

    cdef int64_t cap = n_cls * (k_trn if k_trn > k_tst else k_tst) + n_notfinding
    if cap < 1:
        cap = 1
    out_arr = np.empty((2, cap), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef int64_t sizes[2]
    cdef int64_t k, have, need
    cdef uint64_t bit
    cdef Py_ssize_t lo, hi

    for s in range(2):
        k = k_trn if s == 0 else k_tst
        sizes[s] = 0
        for ci in range(n_lists):
            if ci < n_cls:
                bit = (<uint64_t>1) << bits[ci]
                have = 0
                for i in range(sizes[s]):
                    if m[out[s, i]] & bit:
                        have += 1
                present[s, ci] = have
                need = k - have
                lo = start[ci]
                hi = start[ci + 1]
            else:
                need = n_notfinding
                lo = start[n_cls]
                hi = start[n_lists]
            if need <= 0:
                continue
            a = 0
            for i in range(lo, hi):
                if avail[bucket[i]]:
                    cand[a] = bucket[i]
                    a += 1
            if a < need:
                return (None, None, present_arr,
                        (s, ci if ci < n_cls else -1, int(need), int(a)))
            for i in range(need):
                j = i + <Py_ssize_t>_bounded(&state, <uint64_t>(a - i))
                tmp = cand[i]
                cand[i] = cand[j]
                cand[j] = tmp
                avail[cand[i]] = 0
                out[s, sizes[s]] = p[cand[i]]
                sizes[s] += 1

    return (out_arr[0, :sizes[0]].copy(), out_arr[1, :sizes[1]].copy(),
            present_arr, None)


def auc_rank(scores, labels):
    cdef const double[::1] sc = np.ascontiguousarray(scores, dtype=np.float64)
    lab_arr = np.ascontiguousarray(np.asarray(labels).astype(bool).view(np.uint8))
    cdef const uint8_t[::1] lab = lab_arr
    cdef Py_ssize_t n = sc.shape[0]
    cdef Py_ssize_t i, j, t
    cdef int64_t n_pos = 0
    for i in range(n):
        n_pos += lab[i]
    cdef int64_t n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan"), int(n_pos), int(n_neg)

    order_arr = np.argsort(sc, kind="mergesort").astype(np.int64)
    cdef const int64_t[::1] order = order_arr
    cdef double rank_sum = 0.0
    cdef double midrank
    cdef int64_t pos_in_group
    i = 0
    while i < n:
        j = i + 1
        while j < n and sc[order[j]] == sc[order[i]]:
            j += 1
        midrank = (i + 1 + j) / 2.0
        pos_in_group = 0
        for t in range(i, j):
            pos_in_group += lab[order[t]]
        rank_sum += midrank * pos_in_group
        i = j
    cdef double u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (<double>n_pos * <double>n_neg), int(n_pos), int(n_neg)
