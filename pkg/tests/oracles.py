"""Independent reference implementations used only by the tests.

Nothing here imports the code under test's kernels.  The brute-force
routines are slow by design; keep inputs small.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.signal import correlate2d


def conv2d_loops(x, w, groups=1, pad=0):
    """Textbook grouped cross-correlation with explicit Python loops."""
    n, c, h, wd = x.shape
    co, cig, k, _ = w.shape
    cog = co // groups
    oh, ow = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for o in range(co):
            g = o // cog
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for ci in range(cig):
                        for i in range(k):
                            for j in range(k):
                                yy, xi = y + i - pad, xx + j - pad
                                if 0 <= yy < h and 0 <= xi < wd:
                                    acc += float(x[b, g * cig + ci, yy, xi]) * float(w[o, ci, i, j])
                    out[b, o, y, xx] = acc
    return out


def bilinear_reference(img2d, out_h, out_w):
    """Half-pixel-centre bilinear resize via scipy's order-1 spline sampling."""
    h, w = img2d.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return map_coordinates(np.asarray(img2d, dtype=np.float64), [yy, xx], order=1, mode="nearest")


def replicate_reference(img2d, top, bottom, left, right):
    h, w = img2d.shape
    rows = np.clip(np.arange(-top, h + bottom), 0, h - 1)
    cols = np.clip(np.arange(-left, w + right), 0, w - 1)
    return img2d[np.ix_(rows, cols)]


def _conv_same(chw, w, groups):
    """(C, H, W) float64 'same' cross-correlation using scipy, per channel pair."""
    co, cig, k, _ = w.shape
    cog = co // groups
    out = np.zeros((co,) + chw.shape[1:])
    for o in range(co):
        g = o // cog
        for ci in range(cig):
            if k == 1:
                out[o] += chw[g * cig + ci] * w[o, ci, 0, 0]
            else:
                out[o] += correlate2d(chw[g * cig + ci], w[o, ci], mode="same", boundary="fill")
    return out


def forward_reference(region, tensors, spec_rows):
    """Forward pass of one network from a plain description.

    ``spec_rows`` is a list of ("conv", name) / ("pool",) / ("block", name, residual).
    """
    x = np.asarray(region[0], dtype=np.float64)
    for row in spec_rows:
        if row[0] == "pool":
            c, h, w = x.shape
            x = x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))
        elif row[0] == "conv":
            name = row[1]
            x = _conv_same(x, tensors[name].astype(np.float64), 1)
            if name != "head":
                x = np.minimum(np.maximum(x, 0), 6)
        else:
            _, name, residual = row
            e = np.minimum(np.maximum(_conv_same(x, tensors[f"{name}.expand"].astype(np.float64), 1), 0), 6)
            dw = tensors[f"{name}.depthwise"].astype(np.float64)
            d = np.minimum(np.maximum(_conv_same(e, dw, dw.shape[0]), 0), 6)
            y = _conv_same(d, tensors[f"{name}.bottleneck"].astype(np.float64), 1)
            x = y + x if residual else y
    return 1.0 / (1.0 + np.exp(-x))[None]


def spec_rows(spec):
    """Describe a NetworkSpec for :func:`forward_reference` using only its public fields."""
    rows = []
    for name, layer in spec.named_layers():
        kind = type(layer).__name__
        if kind == "PoolSpec":
            rows.append(("pool",))
        elif kind == "BlockSpec":
            rows.append(("block", name, layer.in_channels == layer.out_channels))
        else:
            rows.append(("conv", name))
    return rows


def pipeline_reference(image, fine_tensors, coarse_tensors, rows, region, short_side):
    """Tile, run both networks, merge and mosaic, written without the package's helpers."""
    _, c, H, W = image.shape
    if H <= W:
        rh, rw = short_side, -(-W * short_side // H)
    else:
        rh, rw = -(-H * short_side // W), short_side
    fine = np.stack([bilinear_reference(image[0, ch], rh, rw) for ch in range(c)])
    fh, fw = -(-rh // region) * region, -(-rw // region) * region
    fine = np.stack([replicate_reference(fine[ch], 0, fh - rh, 0, fw - rw) for ch in range(c)])
    coarse = np.stack([replicate_reference(fine[ch], region, region, region, region) for ch in range(c)])
    fine = fine.astype(np.float32)
    coarse = coarse.astype(np.float32)
    mosaic = np.zeros((fh, fw))
    for r in range(fh // region):
        for q in range(fw // region):
            y0, x0 = r * region, q * region
            f = fine[:, y0 : y0 + region, x0 : x0 + region]
            # coarse window centred on the fine one in padded coordinates
            cy, cx = y0 + region + region // 2, x0 + region + region // 2
            big = coarse[:, cy - 3 * region // 2 : cy + 3 * region // 2, cx - 3 * region // 2 : cx + 3 * region // 2]
            small = np.stack([bilinear_reference(big[ch], region, region) for ch in range(c)]).astype(np.float32)
            s = forward_reference(f[None], fine_tensors, rows) * forward_reference(small[None], coarse_tensors, rows)
            mosaic[y0 : y0 + region, x0 : x0 + region] = bilinear_reference(s[0, 0], region, region)
    return bilinear_reference(mosaic[:rh, :rw], H, W)


def roc_area_pairs(pos, neg):
    """Mann-Whitney form of the ROC area: P(pos > neg) + P(tie) / 2."""
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def auc_judd_enumerate(S, fix):
    """Walk every fixation-value threshold and integrate the ROC polyline by hand."""
    S = np.asarray(S, dtype=np.float64)
    fix = np.asarray(fix) > 0
    pos = [v for v, f in zip(S.ravel(), fix.ravel()) if f]
    neg = [v for v, f in zip(S.ravel(), fix.ravel()) if not f]
    pts = [(0.0, 0.0)]
    for t in sorted(set(pos), reverse=True):
        tpr = sum(p >= t for p in pos) / len(pos)
        fpr = sum(q >= t for q in neg) / len(neg)
        pts.append((fpr, tpr))
    pts.append((1.0, 1.0))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2
    return area


def transport_vertex_enumeration(a, b, cost):
    """Exact transport cost by checking every basic solution of the transportation polytope."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n, m = len(a), len(b)
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m : (i + 1) * m] = 1
    for j in range(m):
        A[n + j, j::m] = 1
    rhs = np.concatenate([a, b])
    c = np.asarray(cost, dtype=np.float64).ravel()
    rank = n + m - 1
    best = np.inf
    for cols in itertools.combinations(range(n * m), rank):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < rank:
            continue
        x, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.abs(sub @ x - rhs).max() > 1e-9 or x.min() < -1e-12:
            continue
        best = min(best, float(c[list(cols)] @ x))
    return best
