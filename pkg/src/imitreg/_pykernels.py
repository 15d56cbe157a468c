"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one-to-one and are used whenever the compiled
extension is unavailable (or ``IMITREG_KERNELS=python`` is set).
"""
import numpy as np


def bilinear_sample(img, xs, ys, fill=0.0):
    img = np.ascontiguousarray(img, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = img.shape
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return np.where(inside, out, fill)


def correlate1d_reflect(img, kernel, axis):
    """Correlate along ``axis`` with an odd-length kernel, symmetric boundary."""
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    half = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (half, half)
    padded = np.pad(img, pad, mode="symmetric")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for j, kj in enumerate(kernel):
        if axis == 0:
            out += kj * padded[j:j + n, :]
        else:
            out += kj * padded[:, j:j + n]
    return out


def box_sum(img, r):
    """Sum over the ``(2r+1)^2`` window, treating pixels outside as zero."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    c = np.zeros((h + 1, w + 1))
    c[1:, 1:] = img.cumsum(0).cumsum(1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - r, 0, h)[:, None]
    y1 = np.clip(ys + r + 1, 0, h)[:, None]
    x0 = np.clip(xs - r, 0, w)[None, :]
    x1 = np.clip(xs + r + 1, 0, w)[None, :]
    return c[y1, x1] - c[y0, x1] - c[y1, x0] + c[y0, x0]


def frangi_response(ixx, ixy, iyy, beta, c, dark):
    ixx = np.asarray(ixx, dtype=np.float64)
    ixy = np.asarray(ixy, dtype=np.float64)
    iyy = np.asarray(iyy, dtype=np.float64)
    tmp = np.sqrt((ixx - iyy) ** 2 + 4.0 * ixy ** 2)
    mu1 = 0.5 * (ixx + iyy + tmp)
    mu2 = 0.5 * (ixx + iyy - tmp)
    swap = np.abs(mu1) > np.abs(mu2)
    l1 = np.where(swap, mu2, mu1)
    l2 = np.where(swap, mu1, mu2)
    safe = np.where(l2 == 0, 1.0, l2)
    rb = np.where(l2 == 0, 0.0, l1 / safe)
    s2 = l1 * l1 + l2 * l2
    v = np.exp(-(rb * rb) / (2.0 * beta * beta)) * (1.0 - np.exp(-s2 / (2.0 * c * c)))
    ok = l2 > 0 if dark else l2 < 0
    return np.where(ok, v, 0.0)
