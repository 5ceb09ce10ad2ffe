# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: CTC forward-backward and one token-passing frame step.

Semantics match ``_pykernels`` exactly; see the docstrings there.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p

cnp.import_array()

cdef double NEG_INF = -1.0e30


cdef inline double lse2(double a, double b) noexcept nogil:
    cdef double t
    if a < b:
        t = a
        a = b
        b = t
    if b <= NEG_INF:
        return a
    return a + log1p(exp(b - a))


def ctc_forward_backward(const double[:, ::1] logp, const cnp.int64_t[::1] ext, long blank):
    cdef Py_ssize_t T = logp.shape[0], U = logp.shape[1], L = ext.shape[0]
    cdef Py_ssize_t t, s
    cdef double a, b, ll, g
    alpha_arr = np.full((T, L), NEG_INF)
    beta_arr = np.full((T, L), NEG_INF)
    occ_arr = np.zeros((T, U))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] occ = occ_arr

    with nogil:
        alpha[0, 0] = logp[0, ext[0]]
        if L > 1:
            alpha[0, 1] = logp[0, ext[1]]
        for t in range(1, T):
            for s in range(L):
                a = alpha[t - 1, s]
                if s >= 1:
                    a = lse2(a, alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                    a = lse2(a, alpha[t - 1, s - 2])
                if a > NEG_INF:
                    alpha[t, s] = a + logp[t, ext[s]]

        ll = alpha[T - 1, L - 1]
        if L > 1:
            ll = lse2(ll, alpha[T - 1, L - 2])

        beta[T - 1, L - 1] = logp[T - 1, ext[L - 1]]
        if L > 1:
            beta[T - 1, L - 2] = logp[T - 1, ext[L - 2]]
        for t in range(T - 2, -1, -1):
            for s in range(L):
                b = beta[t + 1, s]
                if s + 1 < L:
                    b = lse2(b, beta[t + 1, s + 1])
                if s + 2 < L and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                    b = lse2(b, beta[t + 1, s + 2])
                if b > NEG_INF:
                    beta[t, s] = b + logp[t, ext[s]]

        if ll > NEG_INF:
            for t in range(T):
                for s in range(L):
                    g = alpha[t, s] + beta[t, s]
                    if g > NEG_INF:
                        occ[t, ext[s]] += exp(g - logp[t, ext[s]] - ll)
    return ll, alpha_arr, beta_arr, occ_arr


cdef inline void relax(
    Py_ssize_t node, double score, Py_ssize_t src, bint extend,
    Py_ssize_t *n_next, Py_ssize_t width,
    cnp.int64_t[::1] slot, cnp.int64_t[::1] nxt_node, double[::1] nxt_score,
    cnp.int64_t[:, ::1] nxt_out, const cnp.int64_t[:, ::1] cur_out,
    const cnp.int64_t[::1] depth, const cnp.int64_t[::1] emit,
) noexcept nogil:
    cdef Py_ssize_t k = slot[node], j
    if k < 0:
        k = n_next[0]
        n_next[0] += 1
        slot[node] = k
        nxt_node[k] = node
    elif score <= nxt_score[k]:
        return
    nxt_score[k] = score
    for j in range(width):
        nxt_out[k, j] = cur_out[src, j]
    if extend:
        nxt_out[k, depth[node] - 1] = emit[node]


def decode_step(
    const double[::1] logp,
    long blank,
    bint absorb,
    double beam,
    long max_tokens,
    const cnp.int64_t[::1] emit,
    const cnp.int64_t[::1] child_ptr,
    const cnp.int64_t[::1] child_idx,
    const cnp.int64_t[::1] depth,
    const cnp.int64_t[::1] final_cmd,
    cnp.int64_t[::1] cur_node,
    double[::1] cur_score,
    cnp.int64_t[:, ::1] cur_out,
    long n_cur,
    cnp.int64_t[::1] nxt_node,
    double[::1] nxt_score,
    cnp.int64_t[:, ::1] nxt_out,
    cnp.int64_t[::1] slot,
    cnp.int64_t[::1] keep,
):
    cdef Py_ssize_t width = cur_out.shape[1]
    cdef Py_ssize_t n_next = 0, i, j, k, m, node, c, n_keep, tmp
    cdef double sc, v, best, avg, fin_avg = NEG_INF
    cdef double blank_score = logp[blank]
    cdef long fin_cmd = -1, fin_slot = -1, cmd

    with nogil:
        relax(0, 0.0, 0, False, &n_next, width, slot, nxt_node, nxt_score,
              nxt_out, cur_out, depth, emit)
        for i in range(n_cur):
            node = cur_node[i]
            sc = cur_score[i]
            if node != 0:
                v = logp[emit[node]]
                if absorb and blank_score > v:
                    v = blank_score
                relax(node, sc + v, i, False, &n_next, width, slot, nxt_node,
                      nxt_score, nxt_out, cur_out, depth, emit)
            for j in range(child_ptr[node], child_ptr[node + 1]):
                c = child_idx[j]
                relax(c, sc + logp[emit[c]], i, True, &n_next, width, slot,
                      nxt_node, nxt_score, nxt_out, cur_out, depth, emit)

        for k in range(n_next):
            slot[nxt_node[k]] = -1

        best = NEG_INF
        for k in range(1, n_next):
            if nxt_score[k] > best:
                best = nxt_score[k]
        keep[0] = 0
        n_keep = 1
        for k in range(1, n_next):
            if nxt_score[k] >= best - beam:
                keep[n_keep] = k
                n_keep += 1

        if n_keep > max_tokens:
            # order non-root survivors by (score desc, node asc)
            for i in range(2, n_keep):
                tmp = keep[i]
                m = i - 1
                while m >= 1 and (
                    nxt_score[keep[m]] < nxt_score[tmp]
                    or (nxt_score[keep[m]] == nxt_score[tmp] and nxt_node[keep[m]] > nxt_node[tmp])
                ):
                    keep[m + 1] = keep[m]
                    m -= 1
                keep[m + 1] = tmp
            n_keep = max_tokens

        for i in range(1, n_keep):
            tmp = keep[i]
            m = i - 1
            while m >= 0 and nxt_node[keep[m]] > nxt_node[tmp]:
                keep[m + 1] = keep[m]
                m -= 1
            keep[m + 1] = tmp

        for k in range(n_keep):
            i = keep[k]
            cur_node[k] = nxt_node[i]
            cur_score[k] = nxt_score[i]
            for j in range(width):
                cur_out[k, j] = nxt_out[i, j]

        for k in range(n_keep):
            cmd = final_cmd[cur_node[k]]
            if cmd >= 0:
                avg = cur_score[k] / depth[cur_node[k]]
                if fin_slot < 0 or avg > fin_avg or (avg == fin_avg and cmd < fin_cmd):
                    fin_cmd = cmd
                    fin_avg = avg
                    fin_slot = k
    return n_keep, fin_cmd, fin_avg, fin_slot
