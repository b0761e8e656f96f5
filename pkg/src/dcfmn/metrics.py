"""Evaluation protocol: Y-channel PSNR/SSIM, parameter and MAC accounting.

PSNR and SSIM follow the convention behind published super-resolution
baselines: BT.601 studio-swing luma computed from the 8-bit RGB images,
a border crop of ``scale`` pixels on every side, MSE against peak 255,
and mean local SSIM with an 11x11 Gaussian window (sigma 1.5,
K1 = 0.01, K2 = 0.03, dynamic range 255) on valid window positions.

MAC counting (one multiply-accumulate = one unit) is analytic over the
layer table at the 1280x720-output convention:

- convolution: out_h * out_w * out_c * (in_c / groups) * k^2 (bias free)
- layer norm:  4 * h * w * C   (mean, variance, normalize, affine)
- SE gate:     h*w*C pool + C*mid + mid*C matrix terms + h*w*C scale
- activations, residual adds and pixel shuffle: not counted

``--flops`` style doubling is left to callers (a MAC is two FLOPs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import data as D
from .model import Model, ModelConfig, model_forward
from .nn import ShapeError

PSNR_CAP = 99.0

_Y_COEF = np.array([65.481, 128.553, 24.966])


def rgb_to_y(image: np.ndarray) -> np.ndarray:
    """BT.601 studio-swing luma plane (floats in [16, 235]) from 8-bit RGB."""
    D.check_image8(image)
    rgb = image.astype(np.float64) / 255.0
    return 16.0 + rgb @ _Y_COEF


def _as_y_plane(x: np.ndarray) -> np.ndarray:
    if x.ndim == 3:
        return rgb_to_y(x)
    if x.ndim == 2:
        return np.asarray(x, dtype=np.float64)
    raise ShapeError("expected an (h, w, 3) uint8 image or an (h, w) Y plane")


def _cropped_pair(sr, hr, crop):
    a = _as_y_plane(sr)
    b = _as_y_plane(hr)
    if a.shape != b.shape:
        raise ShapeError(f"extent mismatch {a.shape} vs {b.shape}")
    if crop < 0 or 2 * crop >= min(a.shape):
        raise ValueError(f"crop {crop} exceeds the {a.shape} image")
    if crop:
        a = a[crop:-crop, crop:-crop]
        b = b[crop:-crop, crop:-crop]
    return a, b


def psnr(sr, hr, crop: int) -> float:
    """Peak signal-to-noise ratio in dB on the Y plane, 255 peak."""
    a, b = _cropped_pair(sr, hr, crop)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 * 255.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    g = np.exp(-((np.arange(size) - size // 2) ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(plane, g):
    out = sliding_window_view(plane, len(g), axis=0) @ g
    return sliding_window_view(out, len(g), axis=1) @ g


def ssim(sr, hr, crop: int) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows on the Y plane."""
    a, b = _cropped_pair(sr, hr, crop)
    if min(a.shape) < 11:
        raise ValueError("image too small for the 11x11 SSIM window")
    g = _gaussian_window()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mu1 = _filter_valid(a, g)
    mu2 = _filter_valid(b, g)
    s11 = _filter_valid(a * a, g) - mu1 * mu1
    s22 = _filter_valid(b * b, g) - mu2 * mu2
    s12 = _filter_valid(a * b, g) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float((num / den).mean())


# ---------------------------------------------------------------------------
# analytic accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerRow:
    name: str
    params: int
    macs: int


def _conv_row(name, hw, out_c, in_per_group, k, params_extra=0) -> LayerRow:
    params = out_c * in_per_group * k * k + out_c  # weight + bias
    return LayerRow(name, params + params_extra, hw * out_c * in_per_group * k * k)


def lr_extents(scale: int, out_h: int = 720, out_w: int = 1280) -> tuple[int, int]:
    """Input extents that super-resolve to the target output (ceil for x3)."""
    return math.ceil(out_h / scale), math.ceil(out_w / scale)


def layer_table(
    config: ModelConfig, fused: bool = False, out_h: int = 720, out_w: int = 1280
) -> list[LayerRow]:
    """Per-layer parameter and MAC rows at the given output convention."""
    c = config.channels
    cg = config.chunk_channels
    lh, lw = lr_extents(config.scale, out_h, out_w)
    hw = lh * lw
    rows = [_conv_row("head", hw, c, 3, 3)]
    for i in range(config.num_blocks):
        p = f"blocks.{i:02d}"
        rows.append(LayerRow(f"{p}.ln1", 2 * c, 4 * hw * c))
        for j in range(4):
            if fused:
                k = config.stack_target(j)
                rows.append(_conv_row(f"{p}.dsmu.stack{j}", hw, cg, 1, k))
            else:
                for si, (k, _) in enumerate(config.stack_plan(j)):
                    rows.append(_conv_row(f"{p}.dsmu.stack{j}.stage{si}", hw, cg, 1, k))
        rows.append(_conv_row(f"{p}.dsmu.mix", hw, c, c, 1))
        rows.append(LayerRow(f"{p}.ln2", 2 * c, 4 * hw * c))
        rows.append(_conv_row(f"{p}.lfem.expand", hw, 2 * c, c, 1))
        if fused:
            rows.append(_conv_row(f"{p}.lfem.rep", hw, 2 * c, 2 * c, 3))
        else:
            for br in range(config.lfem_branches):
                rows.append(_conv_row(f"{p}.lfem.branch{br}", hw, 2 * c, 2 * c, 3))
        if not config.no_se:
            mid = config.se_mid
            se_params = mid * 2 * c + mid + 2 * c * mid + 2 * c
            se_macs = hw * 2 * c + 2 * c * mid + mid * 2 * c + hw * 2 * c
            rows.append(LayerRow(f"{p}.lfem.se", se_params, se_macs))
        rows.append(_conv_row(f"{p}.lfem.reduce", hw, c, 2 * c, 1))
    rows.append(_conv_row("tail", hw, 3 * config.scale**2, c, 3))
    return rows


def count_macs(
    config: ModelConfig, fused: bool = False, out_h: int = 720, out_w: int = 1280
) -> int:
    """Total multiply-accumulates to produce one out_h x out_w output."""
    return sum(row.macs for row in layer_table(config, fused, out_h, out_w))


def count_params_analytic(config: ModelConfig, fused: bool = False) -> int:
    return sum(row.params for row in layer_table(config, fused))


# ---------------------------------------------------------------------------
# dataset evaluation
# ---------------------------------------------------------------------------


@dataclass
class PerImage:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class MetricsReport:
    method: str
    dataset: str
    scale: int
    psnr_db: float
    ssim: float
    params: int
    macs: int
    per_image: list = field(default_factory=list)


def super_resolve_image(model: Model, lr: np.ndarray) -> np.ndarray:
    """uint8 LR image -> clamped, quantized uint8 SR image."""
    x = D.to_real(lr, dtype=model.config.np_dtype).transpose(2, 0, 1)[None]
    y = model_forward(model, x)[0].transpose(1, 2, 0)
    return D.to_image8(y)


def evaluate(model, dataset, scale: int, dataset_name: str = "dataset") -> MetricsReport:
    """Per-image Y-channel PSNR/SSIM with crop = scale, plus accounting.

    ``model`` is a Model (any form; evaluated as given) or the string
    "bicubic" for the baseline upscaler. ``dataset`` is a manifest path
    or a list of (hr, lr) uint8 pairs; aggregation follows list order.
    """
    if scale not in (2, 3, 4):
        raise ValueError(f"scale must be 2, 3 or 4, got {scale}")
    if isinstance(dataset, (str, bytes)) or hasattr(dataset, "__fspath__"):
        pairs, manifest_scale = D.load_dataset(dataset)
        if manifest_scale != scale:
            raise ValueError(f"manifest is x{manifest_scale}, requested x{scale}")
    else:
        pairs = list(dataset)
    if not pairs:
        raise ValueError("empty evaluation dataset")

    bicubic = isinstance(model, str)
    if bicubic:
        if model != "bicubic":
            raise ValueError(f"unknown pseudo-model {model!r}")
        params = 0
        macs = 0
    else:
        if model.config.scale != scale:
            raise ValueError(
                f"model is x{model.config.scale}, dataset is x{scale}"
            )
        params = sum(int(v.size) for v in model.params.values())
        macs = count_macs(model.config, fused=model.fused)

    per_image = []
    for idx, (hr, lr) in enumerate(pairs):
        if hr.shape[0] != lr.shape[0] * scale or hr.shape[1] != lr.shape[1] * scale:
            raise ShapeError(f"pair {idx} violates the x{scale} extent law")
        if bicubic:
            sr = D.upscale_bicubic(lr, scale)
        else:
            sr = super_resolve_image(model, lr)
        per_image.append(
            PerImage(f"img{idx:03d}", psnr(sr, hr, crop=scale), ssim(sr, hr, crop=scale))
        )
    mean_psnr = float(np.mean([p.psnr_db for p in per_image]))
    mean_ssim = float(np.mean([p.ssim for p in per_image]))
    method = "bicubic" if bicubic else "dcfmn"
    return MetricsReport(method, dataset_name, scale, mean_psnr, mean_ssim,
                         params, macs, per_image)


def report_csv(report: MetricsReport) -> str:
    lines = ["method,scale,params,macs,dataset,psnr_db,ssim"]
    lines.append(
        f"{report.method},{report.scale},{report.params},{report.macs},"
        f"{report.dataset},{report.psnr_db:.4f},{report.ssim:.6f}"
    )
    lines.append("image,psnr_db,ssim")
    for p in report.per_image:
        lines.append(f"{p.name},{p.psnr_db:.4f},{p.ssim:.6f}")
    return "\n".join(lines) + "\n"


def report_markdown(report: MetricsReport) -> str:
    head = (
        "| Method | Scale | #Params[K] | #MACs[G] | "
        f"{report.dataset} PSNR/SSIM |\n"
        "|---|---|---|---|---|\n"
    )
    row = (
        f"| {report.method} | x{report.scale} | {report.params / 1e3:.1f} | "
        f"{report.macs / 1e9:.2f} | {report.psnr_db:.2f}/{report.ssim:.4f} |\n"
    )
    return head + row
