"""Compiled layer kernels and the two fixed graphs built from them.

Everything here works on float64 numpy buffers. Parameter arrays are views
into one flat buffer so optimizers can update the whole model in one pass.
"""

import math

import numpy as np
from numba import njit

POOL_T, POOL_F = 10, 2
KSIZE = 3
N_FILTERS = 20
N_FC1 = 150
N_LSTM_FC1 = 50
LOGIT_CLAMP = 30.0
INPUT_SCALE_DB = 10.0
TINY = 1e-200

SGD, ADAGRAD, ADAM = 0, 1, 2


# ---------------------------------------------------------------- layers


@njit(cache=True)
def avg_pool(x, ph, pw):
    """Non-overlapping average pool; trailing rows/cols that do not fill a window are dropped."""
    H = x.shape[0] // ph
    W = x.shape[1] // pw
    out = np.zeros((H, W))
    for i in range(H):
        for a in range(ph):
            r = i * ph + a
            for j in range(W):
                s = 0.0
                for b in range(pw):
                    s += x[r, j * pw + b]
                out[i, j] += s
    return out / (ph * pw)


@njit(cache=True)
def conv2d_valid(p, w, b):
    kh, kw, F = w.shape
    H = p.shape[0] - kh + 1
    W = p.shape[1] - kw + 1
    z = np.empty((H, W, F))
    for i in range(H):
        for j in range(W):
            for f in range(F):
                z[i, j, f] = b[f]
            for a in range(kh):
                for c in range(kw):
                    v = p[i + a, j + c]
                    for f in range(F):
                        z[i, j, f] += v * w[a, c, f]
    return z


@njit(cache=True)
def conv2d_valid_backward(p, gz, gw, gb):
    """Accumulate filter and bias gradients into ``gw``/``gb``."""
    H, W, F = gz.shape
    kh, kw = gw.shape[0], gw.shape[1]
    for i in range(H):
        for j in range(W):
            for f in range(F):
                gb[f] += gz[i, j, f]
            for a in range(kh):
                for c in range(kw):
                    v = p[i + a, j + c]
                    for f in range(F):
                        gw[a, c, f] += v * gz[i, j, f]


@njit(cache=True)
def relu_inplace(z):
    flat = z.ravel()
    for k in range(flat.size):
        if flat[k] < 0.0:
            flat[k] = 0.0


@njit(cache=True)
def channel_average_pool(a):
    H, W, C = a.shape
    out = np.empty((H, W))
    for i in range(H):
        for j in range(W):
            s = 0.0
            for c in range(C):
                s += a[i, j, c]
            out[i, j] = s / C
    return out


@njit(cache=True)
def channel_average_pool_backward(g, C):
    H, W = g.shape
    out = np.empty((H, W, C))
    for i in range(H):
        for j in range(W):
            v = g[i, j] / C
            for c in range(C):
                out[i, j, c] = v
    return out


@njit(cache=True)
def sigmoid(v):
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


@njit(cache=True)
def bce_with_logit(z, y):
    # log(1 + exp(-|z|)) form: finite for every finite z
    return max(z, 0.0) - z * y + math.log1p(math.exp(-abs(z)))


@njit(cache=True)
def clamped_prob(z):
    return sigmoid(min(max(z, -LOGIT_CLAMP), LOGIT_CLAMP))


# ---------------------------------------------------------------- CNN-3


@njit(cache=True)
def cnn3_forward(x, conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, keep, center):
    """Returns (logit, pooled, conv pre-activations, averaged map, fc1 pre-activations, fc1 output).

    With ``center`` the pooled map is referenced to its median and divided by
    INPUT_SCALE_DB before the convolution.
    """
    p = avg_pool(x, POOL_T, POOL_F)
    if center:
        p = (p - np.median(p)) / INPUT_SCALE_DB
    z = conv2d_valid(p, conv_w, conv_b)
    a = z.copy()
    relu_inplace(a)
    m = channel_average_pool(a).ravel()
    h = fc1_b.copy()
    for k in range(m.size):
        mk = m[k]
        if mk != 0.0:
            for n in range(h.size):
                h[n] += mk * fc1_w[k, n]
    hr = np.empty(h.size)
    logit = fc2_b[0]
    for n in range(h.size):
        v = h[n] * keep[n] if h[n] > 0.0 else 0.0
        hr[n] = v
        logit += v * fc2_w[n]
    return logit, p, z, m, h, hr


@njit(cache=True)
def cnn3_backward(dlogit, p, z, m, h, hr, keep, fc1_w, fc2_w,
                  g_conv_w, g_conv_b, g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b):
    """Overwrite the gradient views with d(loss)/d(param) given d(loss)/d(logit)."""
    g_fc2_b[0] = dlogit
    nh = h.size
    gh = np.empty(nh)
    for n in range(nh):
        g_fc2_w[n] = dlogit * hr[n]
        gh[n] = dlogit * fc2_w[n] * keep[n] if h[n] > 0.0 else 0.0
        g_fc1_b[n] = gh[n]
    gm = np.zeros(m.size)
    for k in range(m.size):
        mk = m[k]
        s = 0.0
        for n in range(nh):
            g_fc1_w[k, n] = mk * gh[n]
            s += fc1_w[k, n] * gh[n]
        gm[k] = s
    H, W, C = z.shape
    ga = channel_average_pool_backward(gm.reshape((H, W)), C)
    for i in range(H):
        for j in range(W):
            for c in range(C):
                if z[i, j, c] <= 0.0:
                    ga[i, j, c] = 0.0
    g_conv_w[:] = 0.0
    g_conv_b[:] = 0.0
    conv2d_valid_backward(p, ga, g_conv_w, g_conv_b)


@njit(cache=True)
def cnn3_views(flat):
    o = 0
    conv_w = flat[o:o + KSIZE * KSIZE * N_FILTERS].reshape((KSIZE, KSIZE, N_FILTERS))
    o += KSIZE * KSIZE * N_FILTERS
    conv_b = flat[o:o + N_FILTERS]
    o += N_FILTERS
    n_map = 11 * 21
    fc1_w = flat[o:o + n_map * N_FC1].reshape((n_map, N_FC1))
    o += n_map * N_FC1
    fc1_b = flat[o:o + N_FC1]
    o += N_FC1
    fc2_w = flat[o:o + N_FC1]
    o += N_FC1
    fc2_b = flat[o:o + 1]
    return conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b


@njit(cache=True)
def cnn3_logit(flat, x, center):
    conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b = cnn3_views(flat)
    return cnn3_forward(x, conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, np.ones(N_FC1), center)[0]


@njit(cache=True)
def cnn3_logits(flat, X, center):
    conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b = cnn3_views(flat)
    keep = np.ones(N_FC1)
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = cnn3_forward(X[i], conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, keep, center)[0]
    return out


@njit(cache=True)
def cnn3_loss_grad(flat, grad, x, y, keep, center):
    conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b = cnn3_views(flat)
    gconv_w, gconv_b, gfc1_w, gfc1_b, gfc2_w, gfc2_b = cnn3_views(grad)
    logit, p, z, m, h, hr = cnn3_forward(x, conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, keep, center)
    cnn3_backward(sigmoid(logit) - y, p, z, m, h, hr, keep, fc1_w, fc2_w,
                  gconv_w, gconv_b, gfc1_w, gfc1_b, gfc2_w, gfc2_b)
    return bce_with_logit(logit, y), logit


# ---------------------------------------------------------------- LSTM


@njit(cache=True)
def lstm_views(flat, n_in, H):
    o = 0
    wx = flat[o:o + n_in * 4 * H].reshape((n_in, 4 * H))
    o += n_in * 4 * H
    wh = flat[o:o + H * 4 * H].reshape((H, 4 * H))
    o += H * 4 * H
    b = flat[o:o + 4 * H]
    o += 4 * H
    fc1_w = flat[o:o + H * N_LSTM_FC1].reshape((H, N_LSTM_FC1))
    o += H * N_LSTM_FC1
    fc1_b = flat[o:o + N_LSTM_FC1]
    o += N_LSTM_FC1
    fc2_w = flat[o:o + N_LSTM_FC1]
    o += N_LSTM_FC1
    fc2_b = flat[o:o + 1]
    return wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b


@njit(cache=True)
def lstm_forward(x, wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b, keep, residual, center):
    """Gate order in the 4H axis is input, forget, output, candidate.

    ``rs[t]`` is the (dropped-out) previous cell output fed to step t;
    ``out`` is the last step output, which with ``residual`` is the running
    sum of cell outputs. ``center`` references the input to its median and
    divides by INPUT_SCALE_DB.
    """
    T = x.shape[0]
    H = wh.shape[0]
    xf = np.ascontiguousarray(x).astype(np.float64)
    if center:
        xf = (xf - np.median(xf)) / INPUT_SCALE_DB
    rs = np.zeros((T + 1, H))
    cs = np.zeros((T + 1, H))
    acts = np.zeros((T, 4 * H))
    out = np.zeros(H)
    xa = np.dot(xf, wx)
    for t in range(T):
        a = xa[t] + np.dot(rs[t], wh) + b
        for k in range(H):
            ig = sigmoid(a[k])
            fg = sigmoid(a[H + k])
            og = sigmoid(a[2 * H + k])
            gg = math.tanh(a[3 * H + k])
            c = fg * cs[t, k] + ig * gg
            hv = og * math.tanh(c)
            cs[t + 1, k] = c
            rs[t + 1, k] = hv * keep[t, k]
            acts[t, k] = ig
            acts[t, H + k] = fg
            acts[t, 2 * H + k] = og
            acts[t, 3 * H + k] = gg
            out[k] = out[k] + hv if residual else hv
    hid = np.dot(out, fc1_w) + fc1_b
    hr = np.maximum(hid, 0.0)
    logit = np.dot(hr, fc2_w) + fc2_b[0]
    return logit, xf, rs, cs, acts, out, hid, hr


@njit(cache=True)
def lstm_backward(dlogit, xf, rs, cs, acts, out, hid, hr, keep, residual, wh, fc1_w, fc2_w,
                  g_wx, g_wh, g_b, g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b):
    T = xf.shape[0]
    H = wh.shape[0]
    n_in = xf.shape[1]
    g_fc2_b[0] = dlogit
    gh = np.empty(hid.size)
    for n in range(hid.size):
        g_fc2_w[n] = dlogit * hr[n]
        gh[n] = dlogit * fc2_w[n] if hid[n] > 0.0 else 0.0
        g_fc1_b[n] = gh[n]
    for k in range(H):
        for n in range(hid.size):
            g_fc1_w[k, n] = out[k] * gh[n]
    dout = np.dot(fc1_w, gh)
    g_wx[:] = 0.0
    g_wh[:] = 0.0
    g_b[:] = 0.0
    d_rec = np.zeros(H)
    dc_next = np.zeros(H)
    da = np.empty(4 * H)
    dh = np.empty(H)
    for t in range(T - 1, -1, -1):
        for k in range(H):
            from_out = dout[k] if (residual or t == T - 1) else 0.0
            dh[k] = from_out + d_rec[k] * keep[t, k]
        for k in range(H):
            ig = acts[t, k]
            fg = acts[t, H + k]
            og = acts[t, 2 * H + k]
            gg = acts[t, 3 * H + k]
            tc = math.tanh(cs[t + 1, k])
            dc = dc_next[k] + dh[k] * og * (1.0 - tc * tc)
            dc_next[k] = dc * fg
            da[k] = dc * gg * ig * (1.0 - ig)
            da[H + k] = dc * cs[t, k] * fg * (1.0 - fg)
            da[2 * H + k] = dh[k] * tc * og * (1.0 - og)
            da[3 * H + k] = dc * ig * (1.0 - gg * gg)
        for r in range(n_in):
            v = xf[t, r]
            if v != 0.0:
                for q in range(4 * H):
                    g_wx[r, q] += v * da[q]
        for r in range(H):
            v = rs[t, r]
            if v != 0.0:
                for q in range(4 * H):
                    g_wh[r, q] += v * da[q]
        for q in range(4 * H):
            g_b[q] += da[q]
        d_rec = np.dot(wh, da)


@njit(cache=True)
def lstm_logit(flat, x, H, residual, center):
    wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b = lstm_views(flat, x.shape[1], H)
    keep = np.ones((x.shape[0], H))
    return lstm_forward(x, wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b, keep, residual, center)[0]


@njit(cache=True)
def lstm_logits(flat, X, H, residual, center):
    wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b = lstm_views(flat, X.shape[2], H)
    keep = np.ones((X.shape[1], H))
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = lstm_forward(X[i], wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b, keep, residual, center)[0]
    return out


@njit(cache=True)
def lstm_loss_grad(flat, grad, x, y, keep, H, residual, center):
    n_in = x.shape[1]
    wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b = lstm_views(flat, n_in, H)
    g_wx, g_wh, g_b, g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b = lstm_views(grad, n_in, H)
    logit, xf, rs, cs, acts, out, hid, hr = lstm_forward(x, wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b, keep, residual, center)
    lstm_backward(sigmoid(logit) - y, xf, rs, cs, acts, out, hid, hr, keep, residual, wh, fc1_w, fc2_w,
                  g_wx, g_wh, g_b, g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b)
    return bce_with_logit(logit, y), logit


# ---------------------------------------------------------------- optimizers


@njit(cache=True)
def apply_update(opt, theta, g, s1, s2, t, lr, eps, beta1, beta2):
    if opt == SGD:
        for k in range(theta.size):
            theta[k] -= lr * g[k]
    elif opt == ADAGRAD:
        for k in range(theta.size):
            gk = g[k]
            if gk != 0.0:
                s1[k] += gk * gk
                theta[k] -= lr * gk / (math.sqrt(s1[k]) + eps)
    else:
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for k in range(theta.size):
            gk = g[k]
            m1 = beta1 * s1[k] + (1.0 - beta1) * gk
            m2 = beta2 * s2[k] + (1.0 - beta2) * gk * gk
            # keep idle moments out of the subnormal range, which is very slow
            s1[k] = m1 if abs(m1) > TINY else 0.0
            s2[k] = m2 if m2 > TINY else 0.0
            theta[k] -= lr * (s1[k] / c1) / (math.sqrt(s2[k] / c2) + eps)


@njit(cache=True)
def cnn3_train_epoch(X, y, order, keep, flat, grad, s1, s2, t, opt, lr, eps, beta1, beta2, center):
    """One pass of per-example updates. Returns (summed loss, step counter, ok flag)."""
    total = 0.0
    for j in range(order.size):
        i = order[j]
        loss, _ = cnn3_loss_grad(flat, grad, X[i], y[i], keep[j], center)
        if not math.isfinite(loss):
            return total, t, False
        total += loss
        t += 1
        apply_update(opt, flat, grad, s1, s2, t, lr, eps, beta1, beta2)
    return total, t, True


@njit(cache=True)
def lstm_train_epoch(X, y, order, keep, flat, grad, s1, s2, t, opt, lr, eps, beta1, beta2, H, residual, center):
    total = 0.0
    for j in range(order.size):
        i = order[j]
        loss, _ = lstm_loss_grad(flat, grad, X[i], y[i], keep[j], H, residual, center)
        if not math.isfinite(loss):
            return total, t, False
        total += loss
        t += 1
        apply_update(opt, flat, grad, s1, s2, t, lr, eps, beta1, beta2)
    return total, t, True


# ---------------------------------------------------------------- finite differences


@njit(cache=True)
def _cnn3_probe(flat, x, y, center):
    conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b = cnn3_views(flat)
    logit, p, z, m, h, hr = cnn3_forward(x, conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, np.ones(N_FC1), center)
    return bce_with_logit(logit, y), np.concatenate(((z.ravel() > 0.0), (h > 0.0)))


@njit(cache=True)
def cnn3_numeric_grad(flat, x, y, idx, eps, out, kinked, center):
    """Central differences of the loss; a one-sided difference on the side where
    no ReLU changes state is used when a kink lies inside the stencil."""
    f0, base = _cnn3_probe(flat, x, y, center)
    for j in range(idx.size):
        k = idx[j]
        orig = flat[k]
        flat[k] = orig + eps
        fp, pat = _cnn3_probe(flat, x, y, center)
        same_p = np.array_equal(pat, base)
        flat[k] = orig - eps
        fm, pat = _cnn3_probe(flat, x, y, center)
        same_m = np.array_equal(pat, base)
        flat[k] = orig
        if same_p and same_m:
            out[j] = (fp - fm) / (2.0 * eps)
            kinked[j] = 0
        else:
            out[j] = (fp - f0) / eps if same_p else (f0 - fm) / eps
            kinked[j] = 1 if (same_p or same_m) else 2


@njit(cache=True)
def _lstm_probe(flat, x, y, H, residual, center):
    wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b = lstm_views(flat, x.shape[1], H)
    keep = np.ones((x.shape[0], H))
    res = lstm_forward(x, wx, wh, b, fc1_w, fc1_b, fc2_w, fc2_b, keep, residual, center)
    return bce_with_logit(res[0], y), res[6] > 0.0


@njit(cache=True)
def lstm_numeric_grad(flat, x, y, H, residual, idx, eps, out, kinked, center):
    if center:  # the input is fixed, so reference it once rather than per probe
        x = (x.astype(np.float64) - np.median(x)) / INPUT_SCALE_DB
        center = False
    f0, base = _lstm_probe(flat, x, y, H, residual, center)
    for j in range(idx.size):
        k = idx[j]
        orig = flat[k]
        flat[k] = orig + eps
        fp, pat = _lstm_probe(flat, x, y, H, residual, center)
        same_p = np.array_equal(pat, base)
        flat[k] = orig - eps
        fm, pat = _lstm_probe(flat, x, y, H, residual, center)
        same_m = np.array_equal(pat, base)
        flat[k] = orig
        if same_p and same_m:
            out[j] = (fp - fm) / (2.0 * eps)
            kinked[j] = 0
        else:
            out[j] = (fp - f0) / eps if same_p else (f0 - fm) / eps
            kinked[j] = 1 if (same_p or same_m) else 2
