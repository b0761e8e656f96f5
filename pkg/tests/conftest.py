import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


def finite_difference_grad(f, x, step=1e-5):
    """Central-difference gradient of scalar f at x (same shape as x)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def naive_conv2d(x, weight, bias, kernel, dilation, groups):
    """Direct six-nested-loop convolution oracle (stride 1, zero same padding)."""
    n, c, h, w = x.shape
    o = weight.shape[0]
    cg = c // groups
    og = o // groups
    pad = dilation * (kernel - 1) // 2
    out = np.zeros((n, o, h, w), dtype=np.float64)
    for b in range(n):
        for oc in range(o):
            g = oc // og
            for y in range(h):
                for xx in range(w):
                    acc = 0.0
                    for ic in range(cg):
                        for i in range(kernel):
                            for j in range(kernel):
                                yy = y + dilation * i - pad
                                xj = xx + dilation * j - pad
                                if 0 <= yy < h and 0 <= xj < w:
                                    acc += (
                                        x[b, g * cg + ic, yy, xj]
                                        * weight[oc, ic, i, j]
                                    )
                    out[b, oc, y, xx] = acc
            if bias is not None:
                out[b, oc] += bias[0, oc, 0, 0]
    return out
