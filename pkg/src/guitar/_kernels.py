"""Numba kernels: measure forward/backward passes, neighbour keys, edge selection.

All loops run in a fixed order without fast-math, so a row scored alone and the
same row scored inside a batch produce bitwise-identical values.
"""

import numba
import numpy as np

INNER_PRODUCT = 0
COSINE = 1
NEG_L2 = 2
MLP_SIGMOID = 3
DEEPFM = 4


@numba.njit(cache=True, nogil=True)
def sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True, nogil=True)
def sigmoid_prime(z):
    e = np.exp(-abs(z))
    return e / ((1.0 + e) * (1.0 + e))


@numba.njit(cache=True, nogil=True)
def mlp_forward(inp, weights, dims, zbuf):
    """Return the output logit; hidden pre-activations are written to ``zbuf``.

    Layer l stores W (dims[l] x dims[l+1], row-major) then bias (dims[l+1]).
    Hidden layers use ReLU, the last layer is linear with width 1.
    """
    a = inp
    off = 0
    zoff = 0
    nl = dims.shape[0] - 1
    out = 0.0
    for l in range(nl):
        din = dims[l]
        dout = dims[l + 1]
        boff = off + din * dout
        nxt = np.empty(dout)
        for j in range(dout):
            s = 0.0
            for i in range(din):
                s += a[i] * weights[off + i * dout + j]
            s += weights[boff + j]
            zbuf[zoff + j] = s
            if l < nl - 1:
                nxt[j] = s if s > 0.0 else 0.0
            else:
                nxt[j] = s
        off = boff + dout
        zoff += dout
        a = nxt
    out = a[0]
    return out


@numba.njit(cache=True, nogil=True)
def mlp_backward(inp, weights, dims, zbuf, grad_in):
    """Write d(logit)/d(inp) into ``grad_in`` using pre-activations from mlp_forward."""
    nl = dims.shape[0] - 1
    # offsets of each layer's weights and pre-activations
    woffs = np.empty(nl, dtype=np.int64)
    zoffs = np.empty(nl, dtype=np.int64)
    off = 0
    zoff = 0
    for l in range(nl):
        woffs[l] = off
        zoffs[l] = zoff
        off += dims[l] * dims[l + 1] + dims[l + 1]
        zoff += dims[l + 1]
    delta = np.ones(1)
    for l in range(nl - 1, -1, -1):
        din = dims[l]
        dout = dims[l + 1]
        woff = woffs[l]
        prev = np.empty(din)
        for i in range(din):
            s = 0.0
            for j in range(dout):
                s += weights[woff + i * dout + j] * delta[j]
            prev[i] = s
        if l > 0:
            zo = zoffs[l - 1]
            for i in range(din):
                if zbuf[zo + i] <= 0.0:
                    prev[i] = 0.0
        delta = prev
    for i in range(grad_in.shape[0]):
        grad_in[i] = delta[i]


@numba.njit(cache=True, nogil=True)
def _logit(kind, x, q, weights, dims, fm_dim, zbuf, inp):
    if kind == MLP_SIGMOID:
        d = x.shape[0]
        for i in range(d):
            inp[i] = x[i]
            inp[d + i] = q[i]
        return mlp_forward(inp, weights, dims, zbuf)
    # DEEPFM
    d = x.shape[0]
    deep = d - fm_dim
    fm = 0.0
    for i in range(fm_dim):
        fm += x[i] * q[i]
    for i in range(deep):
        inp[i] = x[fm_dim + i]
        inp[deep + i] = q[fm_dim + i]
    return fm + mlp_forward(inp, weights, dims, zbuf)


@numba.njit(cache=True, nogil=True)
def _closed_form(kind, x, q):
    d = x.shape[0]
    if kind == INNER_PRODUCT:
        s = 0.0
        for i in range(d):
            s += x[i] * q[i]
        return s
    if kind == COSINE:
        s = 0.0
        nx = 0.0
        nq = 0.0
        for i in range(d):
            s += x[i] * q[i]
            nx += x[i] * x[i]
            nq += q[i] * q[i]
        if nx == 0.0 or nq == 0.0:
            return 0.0
        return s / (np.sqrt(nx) * np.sqrt(nq))
    # NEG_L2 (negative squared distance)
    s = 0.0
    for i in range(d):
        t = x[i] - q[i]
        s += t * t
    return -s


@numba.njit(cache=True, nogil=True)
def score(kind, x, q, weights, dims, fm_dim):
    if kind <= NEG_L2:
        return _closed_form(kind, x, q)
    zbuf = np.empty(max(dims.sum(), 1))
    inp = np.empty(dims[0])
    return sigmoid(_logit(kind, x, q, weights, dims, fm_dim, zbuf, inp))


@numba.njit(cache=True, nogil=True)
def score_batch(kind, X, q, weights, dims, fm_dim, out):
    for r in range(X.shape[0]):
        out[r] = score(kind, X[r], q, weights, dims, fm_dim)


@numba.njit(cache=True, nogil=True)
def score_rows(kind, X, rows, q, weights, dims, fm_dim, out):
    for r in range(rows.shape[0]):
        out[r] = score(kind, X[rows[r]], q, weights, dims, fm_dim)


@numba.njit(cache=True, nogil=True)
def score_grad(kind, x, q, weights, dims, fm_dim, grad):
    """Return f(x, q) and write df/dx into ``grad``."""
    d = x.shape[0]
    if kind <= NEG_L2:
        value = _closed_form(kind, x, q)
        if kind == INNER_PRODUCT:
            for i in range(d):
                grad[i] = q[i]
        elif kind == COSINE:
            s = 0.0
            nx = 0.0
            nq = 0.0
            for i in range(d):
                s += x[i] * q[i]
                nx += x[i] * x[i]
                nq += q[i] * q[i]
            if nx == 0.0 or nq == 0.0:
                for i in range(d):
                    grad[i] = 0.0
            else:
                rx = np.sqrt(nx)
                rq = np.sqrt(nq)
                for i in range(d):
                    grad[i] = q[i] / (rx * rq) - s * x[i] / (nx * rx * rq)
        else:
            for i in range(d):
                grad[i] = -2.0 * (x[i] - q[i])
        return value

    zbuf = np.empty(max(dims.sum(), 1))
    inp = np.empty(dims[0])
    z = _logit(kind, x, q, weights, dims, fm_dim, zbuf, inp)
    value = sigmoid(z)
    sp = sigmoid_prime(z)
    gin = np.empty(dims[0])
    mlp_backward(inp, weights, dims, zbuf, gin)
    if kind == MLP_SIGMOID:
        for i in range(d):
            grad[i] = sp * gin[i]
    else:
        for i in range(fm_dim):
            grad[i] = sp * q[i]
        for i in range(d - fm_dim):
            grad[fm_dim + i] = sp * gin[i]
    return value


@numba.njit(cache=True, nogil=True)
def hidden_preactivations(kind, x, q, weights, dims, fm_dim):
    zbuf = np.zeros(max(dims.sum(), 1))
    if kind > NEG_L2:
        inp = np.empty(dims[0])
        _logit(kind, x, q, weights, dims, fm_dim, zbuf, inp)
    return zbuf


@numba.njit(cache=True, nogil=True)
def neighbor_keys(data, frontier, nbrs, g, gnorm, angle, keys):
    """Angle (radians) or projection of each offset data[u] - data[frontier] against g.

    Offsets of zero length get pi (angle) or -inf (projection).
    """
    x = data[frontier]
    d = x.shape[0]
    for r in range(nbrs.shape[0]):
        y = data[nbrs[r]]
        dot = 0.0
        sq = 0.0
        for i in range(d):
            o = y[i] - x[i]
            dot += o * g[i]
            sq += o * o
        if angle:
            if sq == 0.0:
                keys[r] = np.pi
            else:
                c = dot / (gnorm * np.sqrt(sq))
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
                keys[r] = np.arccos(c)
        else:
            keys[r] = dot / gnorm if sq != 0.0 else -np.inf


@numba.njit(cache=True, nogil=True)
def select_diverse(data, cands, dists, m):
    """Pick up to m of ``cands`` (sorted closest-first, ``dists`` = squared distance to
    the base point), skipping any candidate closer to an already picked one than
    to the base point.  Returns the number picked; picks are moved to the front.
    """
    d = data.shape[1]
    picked = 0
    for r in range(cands.shape[0]):
        if picked >= m:
            break
        u = cands[r]
        ok = True
        for s in range(picked):
            w = cands[s]
            sq = 0.0
            for i in range(d):
                t = data[u, i] - data[w, i]
                sq += t * t
            if sq < dists[r]:
                ok = False
                break
        if ok:
            cands[picked] = u
            dists[picked] = dists[r]
            picked += 1
    return picked
