"""Independent reference implementations used as test oracles.

These are deliberately naive (explicit Python loops, scalar math) and share no
code with the package, so agreement is evidence rather than tautology.
"""
import math
from decimal import Decimal, getcontext

import numpy as np


# --- CLAHE -----------------------------------------------------------------

def _tile_bounds(n, k):
    return [((i * n) // k, ((i + 1) * n) // k) for i in range(k)]


def _bin_of(v, bins):
    return min(int(v * bins), bins - 1)


def naive_tile_mapping(values, clip_limit, bins):
    """Clipped-histogram CDF mapping for one tile; None means 'identity' (single occupied bin)."""
    n = len(values)
    hist = [0] * bins
    for v in values:
        hist[_bin_of(v, bins)] += 1
    if sum(1 for h in hist if h > 0) == 1:
        return None
    ceiling = clip_limit * n / bins
    excess = sum(max(h - ceiling, 0.0) for h in hist)
    clipped = [min(h, ceiling) + excess / bins for h in hist]
    cdf, running = [], 0.0
    for c in clipped:
        running += c
        cdf.append(running)
    first = next(i for i, c in enumerate(clipped) if c > 0)
    cmin = cdf[first]
    return [min(max((c - cmin) / (n - cmin), 0.0), 1.0) for c in cdf]


def naive_clahe(img, clip_limit=2.0, tiles=(8, 8), bins=256):
    """Per-pixel CLAHE: look up the four surrounding tile centers for every pixel."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    cols, rows = tiles
    rb, cb = _tile_bounds(h, rows), _tile_bounds(w, cols)
    maps = [[naive_tile_mapping(img[r0:r1, c0:c1].ravel().tolist(), clip_limit, bins)
             for (c0, c1) in cb] for (r0, r1) in rb]
    rc = [(a + b - 1) / 2.0 for a, b in rb]
    cc = [(a + b - 1) / 2.0 for a, b in cb]

    def neighbours(p, centers):
        if p <= centers[0]:
            return 0, 0, 0.0
        if p >= centers[-1]:
            return len(centers) - 1, len(centers) - 1, 0.0
        i = max(k for k in range(len(centers)) if centers[k] <= p)
        return i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i])

    def apply(m, v):
        return v if m is None else m[_bin_of(v, bins)]

    out = np.zeros_like(img)
    for y in range(h):
        r0, r1, ty = neighbours(y, rc)
        for x in range(w):
            c0, c1, tx = neighbours(x, cc)
            v = img[y, x]
            top = (1 - tx) * apply(maps[r0][c0], v) + tx * apply(maps[r0][c1], v)
            bot = (1 - tx) * apply(maps[r1][c0], v) + tx * apply(maps[r1][c1], v)
            out[y, x] = min(max((1 - ty) * top + ty * bot, 0.0), 1.0)
    return out


def global_histeq(img, bins=256):
    """Unclipped global equalization: (cdf(b) - cdf_min) / (N - cdf_min), counted by sorting."""
    flat = [_bin_of(v, bins) for v in np.asarray(img, dtype=np.float64).ravel()]
    n = len(flat)
    ordered = sorted(flat)
    cmin = ordered.count(ordered[0])
    out = []
    for b in flat:
        cdf = sum(1 for o in ordered if o <= b)
        out.append((cdf - cmin) / (n - cmin) if n > cmin else 0.0)
    return np.array(out).reshape(np.shape(img))


# --- ROC / AUC --------------------------------------------------------------

def pair_counting_auc(labels, scores):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


# --- loss ---------------------------------------------------------------------

def scalar_combined_loss(logits, labels, gamma, epsilon, weights):
    """Per-sample loop with math.exp/log; returns the batch mean."""
    total = 0.0
    for z, y in zip(logits, labels):
        z = [float(v) for v in z]
        C = len(z)
        m = max(z)
        denom = sum(math.exp(v - m) for v in z)
        s = 0.0
        for c in range(C):
            p = math.exp(z[c] - m) / denom
            logp = (z[c] - m) - math.log(denom)
            q = (1 - epsilon) * (1.0 if c == y else 0.0) + epsilon / C
            s += q * (1 - p) ** gamma * logp
        total += -weights[int(y)] * s
    return total / len(labels)


def mean_cross_entropy(logits, labels):
    total = 0.0
    for z, y in zip(logits, labels):
        m = max(z)
        total += -(z[int(y)] - m - math.log(sum(math.exp(v - m) for v in z)))
    return total / len(labels)


def decimal_class_weights(counts, beta, digits=60):
    """(1 - beta) / (1 - beta**n) for each count, normalized to sum to C, in high precision."""
    getcontext().prec = digits
    b = Decimal(str(beta))
    raw = [(1 - b) / (1 - b ** int(n)) for n in counts]
    s = sum(raw)
    return [float(r * len(raw) / s) for r in raw]


# --- convolution ----------------------------------------------------------

def naive_conv2d(x, w, stride, pad):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    y = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for u in range(k):
                            for v in range(k):
                                r, s = i * stride + u - pad, j * stride + v - pad
                                if 0 <= r < H and 0 <= s < W:
                                    acc += x[b, c, r, s] * w[o, c, u, v]
                    y[b, o, i, j] = acc
    return y


# --- synthetic data ---------------------------------------------------------

def band_energy(img, f_lo, f_hi):
    """Mean spectral power of the mean-removed image over radial frequencies in [f_lo, f_hi] (cycles/pixel)."""
    x = np.asarray(img, dtype=np.float64)
    x = x - x.mean()
    power = np.abs(np.fft.fft2(x)) ** 2
    fy = np.fft.fftfreq(x.shape[0])[:, None]
    fx = np.fft.fftfreq(x.shape[1])[None, :]
    r = np.sqrt(fx ** 2 + fy ** 2)
    band = (r >= f_lo) & (r <= f_hi)
    return float(power[band].mean())
