"""Independent reference computations used by the tests.

Nothing here imports the package's numerical code: activations are
recomputed with plain Python floats or mpmath, and relevance is
obtained by enumerating every backward path instead of accumulating
layer by layer.
"""

import math

import mpmath
import numpy as np


def mp_sigmoid(z):
    return 1 / (1 + mpmath.e ** (-z))


def mp_lstm_step(p, x, h_prev, c_prev, dps=50):
    """Direct high-precision evaluation of one LSTM step.

    ``p`` is a dict of numpy arrays named like the model parameters.
    Returns floats ``(f, i, c_tilde, c, o, h)`` as numpy arrays.
    """
    with mpmath.workdps(dps):
        H = len(h_prev)
        X = len(x)

        def pre(g, j):
            s = mpmath.mpf(float(p[f"b_{g}"][j]))
            for k in range(H):
                s += mpmath.mpf(float(p[f"w_{g}h"][j, k])) * mpmath.mpf(float(h_prev[k]))
            for k in range(X):
                s += mpmath.mpf(float(p[f"w_{g}x"][j, k])) * mpmath.mpf(float(x[k]))
            return s

        out = {k: [] for k in ("f", "i", "g", "c", "o", "h")}
        for j in range(H):
            f = mp_sigmoid(pre("f", j))
            i = mp_sigmoid(pre("i", j))
            g = mpmath.tanh(pre("c", j))
            c = f * mpmath.mpf(float(c_prev[j])) + i * g
            o = mp_sigmoid(pre("o", j))
            h = o * mpmath.tanh(c)
            for k, v in zip("figcoh", (f, i, g, c, o, h)):
                out[k].append(float(v))
        return tuple(np.array(out[k]) for k in ("f", "i", "g", "c", "o", "h"))


def mp_output(p, h, dps=50):
    with mpmath.workdps(dps):
        M, H = p["w_yh"].shape
        y = []
        for m in range(M):
            z = mpmath.mpf(float(p["b_y"][m]))
            for k in range(H):
                z += mpmath.mpf(float(p["w_yh"][m, k])) * mpmath.mpf(float(h[k]))
            y.append(float(mp_sigmoid(z)))
        return np.array(y)


def bce(p, label):
    return -(label * math.log(p) + (1 - label) * math.log(1 - p))


def pairwise_auc(labels, scores):
    """O(n^2) AUC: fraction of (positive, negative) pairs ranked right, ties 1/2."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def central_differences(loss_fn, arrays, step=1e-5):
    """Numerical gradient of ``loss_fn(arrays)`` for every entry of every array."""
    grads = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = {**arrays, name: a.copy()}
            plus[name][idx] += step
            minus = {**arrays, name: a.copy()}
            minus[name][idx] -= step
            g[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * step)
        grads[name] = g
    return grads


# --------------------------------------------------------------------------
# LRP by path enumeration

def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def _sgn(z):
    return 1.0 if z >= 0 else -1.0


def _forward_floats(p, onehots):
    """Plain-float forward pass; lists indexed by timestep 0..T."""
    H = p["w_ch"].shape[0]
    h = [[0.0] * H]
    c = [[0.0] * H]
    acts = [None]
    for x in onehots:
        hp, cp = h[-1], c[-1]

        def pre(g, j):
            return (
                float(p[f"b_{g}"][j])
                + sum(float(p[f"w_{g}h"][j, k]) * hp[k] for k in range(H))
                + sum(float(p[f"w_{g}x"][j, k]) * x[k] for k in range(len(x)))
            )

        f = [_sigmoid(pre("f", j)) for j in range(H)]
        i = [_sigmoid(pre("i", j)) for j in range(H)]
        zc = [pre("c", j) for j in range(H)]
        g = [math.tanh(z) for z in zc]
        cn = [f[j] * cp[j] + i[j] * g[j] for j in range(H)]
        o = [_sigmoid(pre("o", j)) for j in range(H)]
        hn = [o[j] * math.tanh(cn[j]) for j in range(H)]
        acts.append({"f": f, "i": i, "g": g, "zc": zc})
        h.append(hn)
        c.append(cn)
    return h, c, acts


def lrp_paths(p, onehots, target, eps=1e-3, delta=0):
    """Input relevance for y_T[target] by summing products along every path.

    Edges (epsilon rule or gate rule), from the output down:

    * y -> h_T[k]
    * h_t[k] -> C_t[k]                     (gate rule, weight 1)
    * C_t[k] -> C_{t-1}[k]                 (forget share)
    * C_t[k] -> c~_t[k]                    (input share, gate rule on i_t)
    * c~_t[j] -> x_t[i]  and  c~_t[j] -> h_{t-1}[k]   (epsilon rule)

    Returns a (T, 2M) array.
    """
    T = len(onehots)
    X = len(onehots[0])
    H = p["w_ch"].shape[0]
    h, c, acts = _forward_floats(p, onehots)

    zy = float(p["b_y"][target]) + sum(float(p["w_yh"][target, k]) * h[T][k] for k in range(H))
    y = _sigmoid(zy)
    n_lower_c = H + X

    def share(w, a, b, z, n):
        return (w * a + delta * (_sgn(z) * eps + b) / n) / (z + _sgn(z) * eps)

    def cand_coef(t, j):
        return {"b": float(p["b_c"][j]), "z": acts[t]["zc"][j]}

    result = np.zeros((T, X))

    def from_h(t, k, w):
        # h_t[k] passes everything to C_t[k]
        if t == 0:
            return
        from_c(t, k, w)

    def from_c(t, k, w):
        denom = c[t][k] + _sgn(c[t][k]) * eps
        forget = acts[t]["f"][k] * c[t - 1][k] / denom
        inp = acts[t]["i"][k] * acts[t]["g"][k] / denom
        if t - 1 >= 1:
            from_c(t - 1, k, w * forget)
        from_cand(t, k, w * inp)

    def from_cand(t, j, w):
        cc = cand_coef(t, j)
        x = onehots[t - 1]
        for i in range(X):
            result[t - 1, i] += w * share(float(p["w_cx"][j, i]), x[i], cc["b"], cc["z"], n_lower_c)
        for k in range(H):
            from_h(t - 1, k, w * share(float(p["w_ch"][j, k]), h[t - 1][k], cc["b"], cc["z"], n_lower_c))

    for k in range(H):
        from_h(T, k, y * share(float(p["w_yh"][target, k]), h[T][k], float(p["b_y"][target]), zy, H))
    return result
