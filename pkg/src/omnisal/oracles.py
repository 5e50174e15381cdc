"""Slow scalar-loop reference implementations.

Every function here is written straight from the operation's definition with
Python loops and float64 scalars, sharing no code with the vectorised
kernels it checks.  Only suitable for small inputs.
"""
from __future__ import annotations

import math

import numpy as np

# tensor kernels -------------------------------------------------------------


def conv3x3_loop(x, kernel, bias) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    c_in, h, w = x.shape
    c_out = kernel.shape[0]
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                acc = float(bias[o])
                for c in range(c_in):
                    for di in range(3):
                        for dj in range(3):
                            y, xx = i + di - 1, j + dj - 1
                            if 0 <= y < h and 0 <= xx < w:
                                acc += kernel[o, c, di, dj] * x[c, y, xx]
                out[o, i, j] = acc
    return out


def gap_loop(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    out = np.zeros(c)
    for k in range(c):
        s = 0.0
        for i in range(h):
            for j in range(w):
                s += x[k, i, j]
        out[k] = s / (h * w)
    return out


def fc_loop(v, w, b) -> np.ndarray:
    out = np.zeros(len(b))
    for o in range(len(b)):
        s = float(b[o])
        for i in range(len(v)):
            s += float(w[o][i]) * float(v[i])
        out[o] = s
    return out


def _sig(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def se_gate_loop(x, w1, b1, w2, b2) -> np.ndarray:
    hidden = [max(v, 0.0) for v in fc_loop(gap_loop(x), w1, b1)]
    return np.array([_sig(z) for z in fc_loop(hidden, w2, b2)])


def se_block_loop(x, w1, b1, w2, b2) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = se_gate_loop(x, w1, b1, w2, b2)
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        out[c] = s[c] * x[c]
    return out


def _taps(n_in: int, n_out: int, o: int):
    src = (o + 0.5) * n_in / n_out - 0.5
    if src < 0:
        src = 0.0
    i0 = int(math.floor(src))
    i0 = min(i0, n_in - 1)
    i1 = min(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def upsample_loop(x, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centre bilinear resampling, one output pixel at a time."""
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w))
    for k in range(c):
        for i in range(out_h):
            y0, y1, fy = _taps(h, out_h, i)
            for j in range(out_w):
                x0, x1, fx = _taps(w, out_w, j)
                top = (1 - fx) * x[k, y0, x0] + fx * x[k, y0, x1]
                bot = (1 - fx) * x[k, y1, x0] + fx * x[k, y1, x1]
                out[k, i, j] = (1 - fy) * top + fy * bot
    return out


# geometry -------------------------------------------------------------------

# x faces first, then y, then z: the first strictly-closest centre wins
_CENTRES = [("F", (1, 0, 0)), ("B", (-1, 0, 0)), ("R", (0, 1, 0)),
            ("L", (0, -1, 0)), ("T", (0, 0, 1)), ("D", (0, 0, -1))]


def closest_face(d) -> str:
    """Face whose centre has the smallest angular distance to direction ``d``."""
    n = math.sqrt(sum(float(c) ** 2 for c in d))
    best, best_ang = None, math.inf
    for label, c in _CENTRES:
        cos = sum(float(a) * b for a, b in zip(d, c)) / n
        ang = math.acos(max(-1.0, min(1.0, cos)))
        if ang < best_ang:
            best, best_ang = label, ang
    return best


def angle_between(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b))))


# fusion modules -------------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid_arr(x):
    return np.vectorize(_sig)(x)


def gef_loop(f_e, f_c, se, conv):
    f_e = np.asarray(f_e, dtype=np.float64)
    f_c = np.asarray(f_c, dtype=np.float64)
    cat = np.concatenate([f_e, f_c])
    gated = se_block_loop(cat, se.w1, se.b1, se.w2, se.b2)
    p = _sigmoid_arr(conv3x3_loop(gated, conv.kernel, conv.bias))
    fused = np.zeros_like(f_e)
    for idx in np.ndindex(*f_e.shape):
        pi = p[(0,) + idx[1:]] if p.shape[0] == 1 else p[idx]
        fused[idx] = pi * f_c[idx] + (1 - pi) * f_e[idx]
    return p, fused


def waf_loop(f_cs, se) -> list[float]:
    cat = np.concatenate([np.asarray(f, dtype=np.float64) for f in f_cs])
    alpha = se_gate_loop(cat, se.w1, se.b1, se.w2, se.b2)
    c = cat.shape[0] // 4
    sums = [sum(alpha[i * c:(i + 1) * c]) for i in range(4)]
    total = sum(sums)
    return [s / total for s in sums]


def dwf_loop(f_e, f_cs, params, use_waf: bool = True) -> np.ndarray:
    """Four GEF passes, the WAF weights, then ``F_E + sum w_i F_i``."""
    fused = [gef_loop(f_e, f_c, g.se, g.conv)[1] for f_c, g in zip(f_cs, params.gef)]
    weights = waf_loop(f_cs, params.waf_se) if use_waf else [0.25] * 4
    out = np.asarray(f_e, dtype=np.float64).copy()
    for w, f in zip(weights, fused):
        out += w * f
    return out


def fr_loop(decoder, encoders: dict, p, sigmoid_mask: bool = False) -> np.ndarray:
    """One FR level evaluated step by step in float64."""

    def conv(x, cp):
        return conv3x3_loop(x, cp.kernel, cp.bias)

    def mask(x):
        return _sigmoid_arr(x) if sigmoid_mask else x

    def up2(x):
        return upsample_loop(x, 2 * x.shape[1], 2 * x.shape[2])

    reduced = conv(decoder, p.reduce)
    f_de = _relu(conv(reduced, p.mod_a) * reduced + conv(reduced, p.mod_b))
    total = None
    for j in ("C1", "C2", "C3", "C4", "E"):
        if j not in encoders:
            continue
        fm = mask(conv(f_de, p.fm_heads[j]))
        f_ej = up2(fm) * conv(encoders[j], p.enc_convs[j])
        total = f_ej if total is None else total + f_ej
    f_e = _relu(conv(total, p.aggregate))
    dm = mask(conv(f_e, p.detail))
    f_dr = dm * up2(f_de)
    return _relu(conv(np.concatenate([f_e, f_dr]), p.fuse))


# metrics --------------------------------------------------------------------

_EPS = np.spacing(1.0)


def _rows(m):
    m = np.asarray(m, dtype=np.float64)
    return m.shape[0], m.shape[1], [[float(v) for v in row] for row in m]


def mae_loop(s, g) -> float:
    h, w, s = _rows(s)
    _, _, g = _rows(g)
    return sum(abs(s[i][j] - g[i][j]) for i in range(h) for j in range(w)) / (h * w)


def _threshold(s, h, w) -> float:
    return min(2.0 * sum(s[i][j] for i in range(h) for j in range(w)) / (h * w), 1.0)


def _empty_gt(s, h, w) -> float:
    t = _threshold(s, h, w)
    return 1.0 if all(s[i][j] <= t for i in range(h) for j in range(w)) else 0.0


def f_measure_loop(s, g, beta2: float = 0.3) -> float:
    h, w, s = _rows(s)
    _, _, g = _rows(g)
    if not any(g[i][j] for i in range(h) for j in range(w)):
        return _empty_gt(s, h, w)
    t = _threshold(s, h, w)
    tp = npred = npos = 0
    for i in range(h):
        for j in range(w):
            p = s[i][j] >= t
            npred += p
            npos += g[i][j] == 1
            tp += p and g[i][j] == 1
    if tp == 0:
        return 0.0
    prec, rec = tp / npred, tp / npos
    return (1 + beta2) * prec * rec / (beta2 * prec + rec)


def weighted_f_loop(s, g, beta2: float = 1.0) -> float:
    h, w, s = _rows(s)
    _, _, g = _rows(g)
    fg = [(i, j) for i in range(h) for j in range(w) if g[i][j] == 1]
    if not fg:
        return _empty_gt(s, h, w)
    err = [[abs(s[i][j] - g[i][j]) for j in range(w)] for i in range(h)]
    dist = [[0.0] * w for _ in range(h)]
    et = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            if g[i][j] == 1:
                et[i][j] = err[i][j]
                continue
            bd = min((a - i) ** 2 + (b - j) ** 2 for a, b in fg)
            ties = [err[a][b] for a, b in fg if (a - i) ** 2 + (b - j) ** 2 == bd]
            dist[i][j] = math.sqrt(bd)
            et[i][j] = sum(ties) / len(ties)
    kern = [[math.exp(-(x * x + y * y) / 50.0) for x in range(-3, 4)] for y in range(-3, 4)]
    ksum = sum(map(sum, kern))
    ea = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for u in range(7):
                for v in range(7):
                    y, x = i + u - 3, j + v - 3
                    if 0 <= y < h and 0 <= x < w:
                        acc += kern[u][v] / ksum * et[y][x]
            ea[i][j] = acc
    tpw = fpw = ew_fg = 0.0
    for i in range(h):
        for j in range(w):
            if g[i][j] == 1:
                e = ea[i][j] if ea[i][j] < err[i][j] else err[i][j]
                ew_fg += e
            else:
                fpw += err[i][j] * (2.0 - math.exp(math.log(0.5) / 5.0 * dist[i][j]))
    tpw = len(fg) - ew_fg
    rec = 1.0 - ew_fg / len(fg)
    prec = tpw / (_EPS + tpw + fpw)
    return (1 + beta2) * rec * prec / (_EPS + rec + beta2 * prec)


def _mean_std(vals):
    n = len(vals)
    m = sum(vals) / n
    if n < 2:
        return m, 0.0
    return m, math.sqrt(sum((v - m) ** 2 for v in vals) / (n - 1))


def _ssim_loop(p, g):
    n = len(p)
    x, y = sum(p) / n, sum(g) / n
    d = max(n - 1, 1)
    sx = sum((a - x) ** 2 for a in p) / d
    sy = sum((b - y) ** 2 for b in g) / d
    sxy = sum((a - x) * (b - y) for a, b in zip(p, g)) / d
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0 else 0.0


def s_measure_loop(s, g, alpha: float = 0.5) -> float:
    h, w, s = _rows(s)
    _, _, g = _rows(g)
    n = h * w
    fg = [(i, j) for i in range(h) for j in range(w) if g[i][j] == 1]
    u = len(fg) / n
    mean_s = sum(map(sum, s)) / n
    if u == 0:
        return 1.0 - mean_s
    if u == 1:
        return mean_s

    def obj(vals):
        m, sd = _mean_std(vals)
        return 2 * m / (m * m + 1 + sd + _EPS)

    o_fg = obj([s[i][j] for i, j in fg])
    o_bg = obj([1 - s[i][j] for i in range(h) for j in range(w) if g[i][j] == 0])
    s_obj = u * o_fg + (1 - u) * o_bg

    cy = sum(i for i, _ in fg) / len(fg)
    cx = sum(j for _, j in fg) / len(fg)
    x, y = int(np.round(cx)) + 1, int(np.round(cy)) + 1  # numpy round: half to even
    s_reg = 0.0
    for r0, r1, c0, c1 in ((0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)):
        r1, c1 = min(r1, h), min(c1, w)
        ps = [s[i][j] for i in range(r0, r1) for j in range(c0, c1)]
        gs = [g[i][j] for i in range(r0, r1) for j in range(c0, c1)]
        if ps:
            s_reg += len(ps) / n * _ssim_loop(ps, gs)
    return max(alpha * s_obj + (1 - alpha) * s_reg, 0.0)


def e_measure_loop(s, g) -> float:
    h, w, s = _rows(s)
    _, _, g = _rows(g)
    n = h * w
    t = _threshold(s, h, w)
    fm = [[1.0 if s[i][j] >= t else 0.0 for j in range(w)] for i in range(h)]
    npos = sum(map(sum, g))
    total = 0.0
    mu_fm = sum(map(sum, fm)) / n
    mu_g = npos / n
    for i in range(h):
        for j in range(w):
            if npos == 0:
                total += 1.0 - fm[i][j]
            elif npos == n:
                total += fm[i][j]
            else:
                a, b = fm[i][j] - mu_fm, g[i][j] - mu_g
                align = 2 * a * b / (a * a + b * b + _EPS)
                total += (align + 1) ** 2 / 4
    return total / n


METRIC_ORACLES = {
    "E_phi": e_measure_loop,
    "S_m": s_measure_loop,
    "wFbeta": weighted_f_loop,
    "Fbeta": f_measure_loop,
    "MAE": mae_loop,
}


def bce_loop(p, g, eps: float = 1e-7) -> float:
    h, w, p = _rows(p)
    _, _, g = _rows(g)
    total = 0.0
    for i in range(h):
        for j in range(w):
            q = min(max(p[i][j], eps), 1 - eps)
            total += g[i][j] * math.log(q) + (1 - g[i][j]) * math.log(1 - q)
    return -total / (h * w)
