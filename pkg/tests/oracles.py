"""Scalar reference implementations. Deliberately slow and loop-based; they share no code with ctdnet."""
import math

import numpy as np


def conv2d_naive(x, w, b, stride, pad):
    B, C, H, W = x.shape
    n_out, _, k, _ = w.shape
    ho = (H + 2 * pad - k) // stride + 1
    wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, n_out, ho, wo), dtype=np.float64)
    for n in range(B):
        for o in range(n_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(C):
                        for u in range(k):
                            for v in range(k):
                                y = i * stride - pad + u
                                z = j * stride - pad + v
                                if 0 <= y < H and 0 <= z < W:
                                    acc += float(x[n, c, y, z]) * float(w[o, c, u, v])
                    out[n, o, i, j] = acc
    return out


def pool_naive(x, kind, k, stride, pad):
    B, C, H, W = x.shape
    ho = (H + 2 * pad - k) // stride + 1
    wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, C, ho, wo))
    for n in range(B):
        for c in range(C):
            for i in range(ho):
                for j in range(wo):
                    cells = []
                    for u in range(k):
                        for v in range(k):
                            y, z = i * stride - pad + u, j * stride - pad + v
                            if 0 <= y < H and 0 <= z < W:
                                cells.append(float(x[n, c, y, z]))
                    out[n, c, i, j] = max(cells) if kind == "max" else sum(cells) / len(cells)
    return out


def bilinear_pixel(img, out_h, out_w, i, j):
    """One output pixel of half-pixel-centre bilinear resampling with border clamping."""
    H, W = len(img), len(img[0])

    def src(idx, n_in, n_out):
        s = (idx + 0.5) * n_in / n_out - 0.5
        return min(max(s, 0.0), n_in - 1.0)

    sy, sx = src(i, H, out_h), src(j, W, out_w)
    y0, x0 = int(math.floor(sy)), int(math.floor(sx))
    y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
    ty, tx = sy - y0, sx - x0
    top = img[y0][x0] * (1 - tx) + img[y0][x1] * tx
    bot = img[y1][x0] * (1 - tx) + img[y1][x1] * tx
    return top * (1 - ty) + bot * ty


def bilinear_naive(img, out_h, out_w):
    return np.array([[bilinear_pixel(img, out_h, out_w, i, j) for j in range(out_w)] for i in range(out_h)])


def mae_naive(p, g):
    total = 0.0
    for a, b in zip(np.ravel(p), np.ravel(g)):
        total += abs(float(a) - float(b))
    return total / np.size(p)


def e_measure_naive(p_bin, g):
    """Enhanced alignment of one binary prediction, pixel by pixel."""
    pv = [float(v) for v in np.ravel(p_bin)]
    gv = [float(v) for v in np.ravel(g)]
    n = len(pv)
    mp, mg = sum(pv) / n, sum(gv) / n
    total = 0.0
    for a, b in zip(pv, gv):
        fa, fb = a - mp, b - mg
        denom = fa * fa + fb * fb
        xi = 2 * fa * fb / denom if denom > 0 else 0.0
        total += (1 + xi) ** 2 / 4
    return total / n


def boundary_naive(mask):
    H, W = mask.shape
    out = np.zeros_like(mask)
    for i in range(H):
        for j in range(W):
            if not mask[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                y, z = i + di, j + dj
                if not (0 <= y < H and 0 <= z < W) or not mask[y, z]:
                    out[i, j] = 1
                    break
    return out


def _floats(p, g):
    return [(float(a), float(b)) for a, b in zip(np.ravel(p), np.ravel(g))]


def bce_naive(p, g):
    return -sum(b * math.log(a) + (1 - b) * math.log(1 - a) for a, b in _floats(p, g))


def iou_naive(p, g):
    pairs = _floats(p, g)
    inter = sum(a * b for a, b in pairs)
    union = sum(a + b - a * b for a, b in pairs)
    return 1 - inter / union


def l1_naive(p, g):
    return sum(abs(a - b) for a, b in _floats(p, g))


def lr_naive(step, total, max_lr, warmup_frac):
    w = round(warmup_frac * total)
    if step <= w:
        return max_lr * step / w
    return max_lr * (1 - (step - w) / (total - w))
