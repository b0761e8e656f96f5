"""Tensor primitives and their hand-written gradients.

Walks the building blocks on small arrays: a dilated depthwise
convolution against a naive loop, and a finite-difference probe of the
convolution's vector-Jacobian product.
"""

import numpy as np

from dcfmn import nn

rng = np.random.default_rng(0)

print("== dilated convolution vs a naive loop ==")
x = rng.standard_normal((1, 2, 6, 6))
spec = nn.ConvSpec(in_channels=2, out_channels=2, kernel=3, dilation=2)
w = rng.standard_normal(spec.weight_shape)
y = nn.conv2d(x, w, None, spec)

naive = np.zeros_like(y)
pad = spec.padding
for o in range(2):
    for yy in range(6):
        for xx in range(6):
            acc = 0.0
            for c in range(2):
                for i in range(3):
                    for j in range(3):
                        a, b = yy + 2 * i - pad, xx + 2 * j - pad
                        if 0 <= a < 6 and 0 <= b < 6:
                            acc += x[0, c, a, b] * w[o, c, i, j]
            naive[0, o, yy, xx] = acc
print(f"max |vectorized - loop| = {np.abs(y - naive).max():.2e}")

print("\n== gradient check of the convolution vjp ==")
up = rng.standard_normal(y.shape)
dx, dw, _ = nn.conv2d_vjp(x, w, None, spec, up)
step = 1e-5
probe = np.zeros(5)
for t in range(5):
    idx = tuple(rng.integers(0, s) for s in w.shape)
    w[idx] += step
    fp = (nn.conv2d(x, w, None, spec) * up).sum()
    w[idx] -= 2 * step
    fm = (nn.conv2d(x, w, None, spec) * up).sum()
    w[idx] += step
    fd = (fp - fm) / (2 * step)
    probe[t] = abs(fd - dw[idx]) / max(abs(fd), 1e-12)
    print(f"weight {idx}: analytic {dw[idx]:+.6f}  finite-diff {fd:+.6f}  "
          f"rel err {probe[t]:.1e}")
assert probe.max() < 1e-4

print("\n== layer norm statistics ==")
x = rng.standard_normal((2, 16, 4, 4)) * 3 + 1
g = np.ones((1, 16, 1, 1))
b = np.zeros((1, 16, 1, 1))
ln = nn.layer_norm(x, g, b)
print(f"per-position channel mean  : {np.abs(ln.mean(axis=1)).max():.2e}")
print(f"per-position channel var   : {np.abs(ln.var(axis=1) - 1).max():.2e}")

print("\n== pixel shuffle index law ==")
x = np.zeros((1, 4, 2, 2))
for k in range(4):
    x[0, k] = k
print(nn.pixel_shuffle(x, 2)[0, 0])
