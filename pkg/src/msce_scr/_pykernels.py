"""Pure-Python kernels. Reference semantics for ``_ckernels.pyx``.

Both modules expose the same two functions with identical signatures and
must produce bit-identical results.
"""

import math

import numpy as np

NEG_INF = -1.0e30


def _lse2(a, b):
    if a < b:
        a, b = b, a
    if b <= NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


def ctc_forward_backward(logp, ext, blank):
    """Log-domain CTC trellis over the blank-augmented label ``ext``.

    ``beta[t, s]`` includes the emission at frame ``t``. Returns
    ``(log_likelihood, alpha, beta, occupancy)`` where ``occupancy[t, u]`` is
    the posterior probability that frame ``t`` emits unit ``u``.
    """
    T, U = logp.shape
    L = ext.shape[0]
    lp = logp.tolist()
    ex = ext.tolist()
    alpha = [[NEG_INF] * L for _ in range(T)]
    beta = [[NEG_INF] * L for _ in range(T)]

    alpha[0][0] = lp[0][ex[0]]
    if L > 1:
        alpha[0][1] = lp[0][ex[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        row = alpha[t]
        frame = lp[t]
        for s in range(L):
            a = prev[s]
            if s >= 1:
                a = _lse2(a, prev[s - 1])
            if s >= 2 and ex[s] != blank and ex[s] != ex[s - 2]:
                a = _lse2(a, prev[s - 2])
            row[s] = a + frame[ex[s]] if a > NEG_INF else NEG_INF

    ll = alpha[T - 1][L - 1]
    if L > 1:
        ll = _lse2(ll, alpha[T - 1][L - 2])

    beta[T - 1][L - 1] = lp[T - 1][ex[L - 1]]
    if L > 1:
        beta[T - 1][L - 2] = lp[T - 1][ex[L - 2]]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        row = beta[t]
        frame = lp[t]
        for s in range(L):
            b = nxt[s]
            if s + 1 < L:
                b = _lse2(b, nxt[s + 1])
            if s + 2 < L and ex[s + 2] != blank and ex[s + 2] != ex[s]:
                b = _lse2(b, nxt[s + 2])
            row[s] = b + frame[ex[s]] if b > NEG_INF else NEG_INF

    occ = np.zeros((T, U))
    if ll > NEG_INF:
        for t in range(T):
            for s in range(L):
                g = alpha[t][s] + beta[t][s]
                if g > NEG_INF:
                    occ[t, ex[s]] += math.exp(g - lp[t][ex[s]] - ll)
    return ll, np.array(alpha), np.array(beta), occ


def decode_step(
    logp,
    blank,
    absorb,
    beam,
    max_tokens,
    emit,
    child_ptr,
    child_idx,
    depth,
    final_cmd,
    cur_node,
    cur_score,
    cur_out,
    n_cur,
    nxt_node,
    nxt_score,
    nxt_out,
    slot,
    keep_buf,
):
    """Advance the current token list by one frame.

    Expanded tokens are recombined into the next-list buffers, pruned, and
    the survivors written back into the current-list buffers.

    Tokens are processed in ascending node order and a candidate replaces an
    existing token only on a strictly better score, so ties keep the token
    from the smaller source node. The root token (node 0) is always kept with
    score 0 so a command may start at any frame.

    ``slot`` (one entry per node, all -1) and ``keep_buf`` are scratch.

    Returns ``(n_tokens, final_command, final_avg, final_slot)``; the last
    three describe the best token on a final node (``-1`` when none).
    """
    blank_score = logp[blank]
    n_next = 0

    def relax(node, score, src, extend):
        nonlocal n_next
        k = slot[node]
        if k < 0:
            k = n_next
            n_next += 1
            slot[node] = k
            nxt_node[k] = node
        elif score <= nxt_score[k]:
            return
        nxt_score[k] = score
        nxt_out[k, :] = cur_out[src, :]
        if extend:
            nxt_out[k, depth[node] - 1] = emit[node]

    relax(0, 0.0, 0, False)
    for i in range(n_cur):
        node = cur_node[i]
        sc = cur_score[i]
        if node != 0:
            v = logp[emit[node]]
            if absorb and blank_score > v:
                v = blank_score
            relax(node, sc + v, i, False)
        for j in range(child_ptr[node], child_ptr[node + 1]):
            c = child_idx[j]
            relax(c, sc + logp[emit[c]], i, True)

    for k in range(n_next):
        slot[nxt_node[k]] = -1

    # beam and max-token pruning; root (slot 0) is never pruned
    best = NEG_INF
    for k in range(1, n_next):
        if nxt_score[k] > best:
            best = nxt_score[k]
    keep = [0] + [k for k in range(1, n_next) if nxt_score[k] >= best - beam]
    if len(keep) > max_tokens:
        rest = sorted(keep[1:], key=lambda k: (-nxt_score[k], nxt_node[k]))
        keep = [0] + rest[: max_tokens - 1]
    keep.sort(key=lambda k: nxt_node[k])

    # survivors go back into the current-list buffers, ascending node order
    n_next = len(keep)
    for k, src in enumerate(keep):
        cur_node[k] = nxt_node[src]
        cur_score[k] = nxt_score[src]
        cur_out[k, :] = nxt_out[src, :]

    fin_cmd, fin_avg, fin_slot = -1, NEG_INF, -1
    for k in range(n_next):
        c = final_cmd[cur_node[k]]
        if c >= 0:
            avg = cur_score[k] / depth[cur_node[k]]
            if fin_slot < 0 or avg > fin_avg or (avg == fin_avg and c < fin_cmd):
                fin_cmd, fin_avg, fin_slot = c, avg, k
    return n_next, fin_cmd, fin_avg, fin_slot
