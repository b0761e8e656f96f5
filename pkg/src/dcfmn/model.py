"""Network assembly: shallow extractor, deep blocks, upsampling tail.

The deep feature path is a chain of identical blocks. Each block is
pre-norm residual twice over:

    x' = dsmu(ln1(x)) + x
    y  = lfem(ln2(x')) + x'

where the multi-scale unit (DSMU) chunks channels four ways, runs one
depthwise dilated stack per chunk (effective kernel sizes 5/7/13/17 by
default), aggregates with a 1x1 convolution, applies GELU and adds its
own input; and the local enhancement module (LFEM) expands channels 2x
with a 1x1, sums parallel 3x3 branches plus an identity self-residual,
applies GELU, a squeeze-excitation gate, and a 1x1 reduction back to C.

Parameters live in a flat path -> array store; every routine that must
be deterministic iterates it in lexicographic path order. Gradients are
hand-composed from the per-op vjps in ``dcfmn.nn``; there is no tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ConfigError, ConvSpec, ShapeError
from .reparam import DilatedStackSpec, compose_stack_to_dense, fuse_parallel_3x3

ParamStore = dict  # str path -> np.ndarray; iterate with sorted() for determinism

SE_REDUCTION = 4

# Self-consistent dilated stacks realizing each target support K:
# K = 1 + sum(d_i * (k_i - 1)) over the stages.
STACK_PLANS: dict[int, tuple[tuple[int, int], ...]] = {
    3: ((3, 1),),
    5: ((3, 1), (3, 1)),
    7: ((3, 1), (3, 2)),
    13: ((3, 2), (3, 2), (3, 2)),
    17: ((3, 2), (3, 3), (3, 3)),
}


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 2
    channels: int = 32
    num_blocks: int = 10
    chunk_targets: tuple[int, int, int, int] = (5, 7, 13, 17)
    lfem_branches: int = 2
    dsmu_plain3x3: bool = False
    no_se: bool = False
    no_self_residual: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.channels < 4 or self.channels % 4:
            raise ConfigError(f"channels must be a positive multiple of 4, got {self.channels}")
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if len(self.chunk_targets) != 4:
            raise ConfigError("chunk_targets must list four kernel sizes")
        for t in self.chunk_targets:
            if t not in STACK_PLANS:
                raise ConfigError(
                    f"no dilated-stack plan for target kernel {t}; "
                    f"supported: {sorted(STACK_PLANS)}"
                )
        if self.lfem_branches < 1:
            raise ConfigError("lfem_branches must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def chunk_channels(self) -> int:
        return self.channels // 4

    @property
    def se_mid(self) -> int:
        return max(1, 2 * self.channels // SE_REDUCTION)

    def stack_plan(self, chunk_index: int) -> tuple[tuple[int, int], ...]:
        if self.dsmu_plain3x3:
            return STACK_PLANS[3]
        return STACK_PLANS[self.chunk_targets[chunk_index]]

    def stack_target(self, chunk_index: int) -> int:
        return 3 if self.dsmu_plain3x3 else self.chunk_targets[chunk_index]


PRESETS = {
    "S": dict(channels=32, num_blocks=10),
    "L": dict(channels=32, num_blocks=16),
    "tiny": dict(channels=16, num_blocks=2),
}


def preset_config(name: str, scale: int, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kwargs = dict(PRESETS[name])
    kwargs.update(overrides)
    return ModelConfig(scale=scale, **kwargs)


@dataclass
class Model:
    config: ModelConfig
    params: ParamStore
    fused: bool = False

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.fused)


def _block_prefix(i: int) -> str:
    return f"blocks.{i:02d}"


def init_model(config: ModelConfig, seed: int) -> Model:
    """He-normal weights, zero biases, identity layer norms; seed-determined."""
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    c = config.channels
    cg = config.chunk_channels
    params: ParamStore = {}

    def conv(path, out_c, in_per_group, k):
        fan_in = in_per_group * k * k
        w = rng.standard_normal((out_c, in_per_group, k, k)) * np.sqrt(2.0 / fan_in)
        params[f"{path}.weight"] = w.astype(dt)
        params[f"{path}.bias"] = np.zeros((1, out_c, 1, 1), dt)

    def lnorm(path):
        params[f"{path}.gain"] = np.ones((1, c, 1, 1), dt)
        params[f"{path}.bias"] = np.zeros((1, c, 1, 1), dt)

    conv("head", c, 3, 3)
    for i in range(config.num_blocks):
        p = _block_prefix(i)
        lnorm(f"{p}.ln1")
        for j in range(4):
            for si, (k, _) in enumerate(config.stack_plan(j)):
                conv(f"{p}.dsmu.stack{j}.stage{si}", cg, 1, k)
        conv(f"{p}.dsmu.mix", c, c, 1)
        lnorm(f"{p}.ln2")
        conv(f"{p}.lfem.expand", 2 * c, c, 1)
        for br in range(config.lfem_branches):
            conv(f"{p}.lfem.branch{br}", 2 * c, 2 * c, 3)
        if not config.no_se:
            conv(f"{p}.lfem.se.fc1", config.se_mid, 2 * c, 1)
            conv(f"{p}.lfem.se.fc2", 2 * c, config.se_mid, 1)
        conv(f"{p}.lfem.reduce", c, 2 * c, 1)
    conv("tail", 3 * config.scale * config.scale, c, 3)
    return Model(config, params, fused=False)


def count_params(model: Model) -> int:
    """Total scalar parameters (weights, biases, norm affines, SE)."""
    return sum(int(v.size) for v in model.params.values())


# ---------------------------------------------------------------------------
# forward pieces (each returns (out, cache) so the backward can reuse work)
# ---------------------------------------------------------------------------


def _head_spec(cfg):
    return ConvSpec(3, cfg.channels, 3)


def _mix_spec(cfg):
    return ConvSpec(cfg.channels, cfg.channels, 1)


def _stage_spec(cfg, k, d):
    cgq = cfg.chunk_channels
    return ConvSpec(cgq, cgq, k, dilation=d, groups=cgq)


def _dense_spec(cfg, kernel):
    cgq = cfg.chunk_channels
    return ConvSpec(cgq, cgq, kernel, dilation=1, groups=cgq)


def _expand_spec(cfg):
    return ConvSpec(cfg.channels, 2 * cfg.channels, 1)


def _branch_spec(cfg):
    return ConvSpec(2 * cfg.channels, 2 * cfg.channels, 3)


def _reduce_spec(cfg):
    return ConvSpec(2 * cfg.channels, cfg.channels, 1)


def _tail_spec(cfg):
    return ConvSpec(cfg.channels, 3 * cfg.scale * cfg.scale, 3)


def _dsmu_fwd(params, prefix, x, cfg, fused):
    parts = nn.chunk4(x)
    outs = []
    stage_inputs = []
    for j, part in enumerate(parts):
        if fused:
            kernel = cfg.stack_target(j)
            w = params[f"{prefix}.dsmu.stack{j}.weight"]
            b = params[f"{prefix}.dsmu.stack{j}.bias"]
            stage_inputs.append([part])
            part = nn.conv2d(part, w, b, _dense_spec(cfg, kernel))
        else:
            ins = []
            for si, (k, d) in enumerate(cfg.stack_plan(j)):
                w = params[f"{prefix}.dsmu.stack{j}.stage{si}.weight"]
                b = params[f"{prefix}.dsmu.stack{j}.stage{si}.bias"]
                ins.append(part)
                part = nn.conv2d(part, w, b, _stage_spec(cfg, k, d))
            stage_inputs.append(ins)
        outs.append(part)
    cat = nn.concat4(outs)
    mixed = nn.conv2d(cat, params[f"{prefix}.dsmu.mix.weight"],
                      params[f"{prefix}.dsmu.mix.bias"], _mix_spec(cfg))
    y = nn.gelu(mixed) + x
    return y, (x, stage_inputs, cat, mixed)


def _dsmu_bwd(params, prefix, cache, dy, grads, cfg, fused):
    x, stage_inputs, cat, mixed = cache
    dmixed = nn.gelu_vjp(mixed, dy)
    dcat, dmw, dmb = nn.conv2d_vjp(cat, params[f"{prefix}.dsmu.mix.weight"],
                                   params[f"{prefix}.dsmu.mix.bias"],
                                   _mix_spec(cfg), dmixed)
    grads[f"{prefix}.dsmu.mix.weight"] = dmw
    grads[f"{prefix}.dsmu.mix.bias"] = dmb
    cgq = cfg.chunk_channels
    dparts = nn.concat4_vjp(dcat, [cgq] * 4)
    dx_parts = []
    for j, dpart in enumerate(dparts):
        if fused:
            kernel = cfg.stack_target(j)
            w = params[f"{prefix}.dsmu.stack{j}.weight"]
            b = params[f"{prefix}.dsmu.stack{j}.bias"]
            dpart, dw, db = nn.conv2d_vjp(stage_inputs[j][0], w, b,
                                          _dense_spec(cfg, kernel), dpart)
            grads[f"{prefix}.dsmu.stack{j}.weight"] = dw
            grads[f"{prefix}.dsmu.stack{j}.bias"] = db
        else:
            plan = cfg.stack_plan(j)
            for si in reversed(range(len(plan))):
                k, d = plan[si]
                w = params[f"{prefix}.dsmu.stack{j}.stage{si}.weight"]
                b = params[f"{prefix}.dsmu.stack{j}.stage{si}.bias"]
                dpart, dw, db = nn.conv2d_vjp(stage_inputs[j][si], w, b,
                                              _stage_spec(cfg, k, d), dpart)
                grads[f"{prefix}.dsmu.stack{j}.stage{si}.weight"] = dw
                grads[f"{prefix}.dsmu.stack{j}.stage{si}.bias"] = db
        dx_parts.append(dpart)
    return np.concatenate(dx_parts, axis=1) + dy


def _lfem_fwd(params, prefix, x, cfg, fused):
    e = nn.conv2d(x, params[f"{prefix}.lfem.expand.weight"],
                  params[f"{prefix}.lfem.expand.bias"], _expand_spec(cfg))
    if fused:
        pre = nn.conv2d(e, params[f"{prefix}.lfem.rep.weight"],
                        params[f"{prefix}.lfem.rep.bias"], _branch_spec(cfg))
    else:
        # one windowed pass for all branches (their outputs are then summed)
        c2 = 2 * cfg.channels
        wcat = np.concatenate(
            [params[f"{prefix}.lfem.branch{br}.weight"]
             for br in range(cfg.lfem_branches)], axis=0)
        bcat = np.concatenate(
            [params[f"{prefix}.lfem.branch{br}.bias"]
             for br in range(cfg.lfem_branches)], axis=1)
        spec_cat = ConvSpec(c2, cfg.lfem_branches * c2, 3)
        stacked = nn.conv2d(e, wcat, bcat, spec_cat)
        pre = stacked[:, :c2].copy()
        for br in range(1, cfg.lfem_branches):
            pre += stacked[:, br * c2 : (br + 1) * c2]
        if not cfg.no_self_residual:
            pre = pre + e
    act = nn.gelu(pre)
    if cfg.no_se:
        gated = act
    else:
        gated = nn.se_block(act,
                            params[f"{prefix}.lfem.se.fc1.weight"],
                            params[f"{prefix}.lfem.se.fc1.bias"],
                            params[f"{prefix}.lfem.se.fc2.weight"],
                            params[f"{prefix}.lfem.se.fc2.bias"])
    y = nn.conv2d(gated, params[f"{prefix}.lfem.reduce.weight"],
                  params[f"{prefix}.lfem.reduce.bias"], _reduce_spec(cfg))
    return y, (x, e, pre, act, gated)


def _lfem_bwd(params, prefix, cache, dy, grads, cfg, fused):
    x, e, pre, act, gated = cache
    dgated, drw, drb = nn.conv2d_vjp(gated, params[f"{prefix}.lfem.reduce.weight"],
                                     params[f"{prefix}.lfem.reduce.bias"],
                                     _reduce_spec(cfg), dy)
    grads[f"{prefix}.lfem.reduce.weight"] = drw
    grads[f"{prefix}.lfem.reduce.bias"] = drb
    if cfg.no_se:
        dact = dgated
    else:
        dact, dw1, db1, dw2, db2 = nn.se_block_vjp(
            act,
            params[f"{prefix}.lfem.se.fc1.weight"],
            params[f"{prefix}.lfem.se.fc1.bias"],
            params[f"{prefix}.lfem.se.fc2.weight"],
            params[f"{prefix}.lfem.se.fc2.bias"],
            dgated,
        )
        grads[f"{prefix}.lfem.se.fc1.weight"] = dw1
        grads[f"{prefix}.lfem.se.fc1.bias"] = db1
        grads[f"{prefix}.lfem.se.fc2.weight"] = dw2
        grads[f"{prefix}.lfem.se.fc2.bias"] = db2
    dpre = nn.gelu_vjp(pre, dact)
    if fused:
        de, dw, db = nn.conv2d_vjp(e, params[f"{prefix}.lfem.rep.weight"],
                                   params[f"{prefix}.lfem.rep.bias"],
                                   _branch_spec(cfg), dpre)
        grads[f"{prefix}.lfem.rep.weight"] = dw
        grads[f"{prefix}.lfem.rep.bias"] = db
    else:
        # every branch sees the same upstream, so the weight/bias gradients
        # coincide across branches, and the summed input gradient is the
        # conv with the summed kernels (linearity)
        wsum = params[f"{prefix}.lfem.branch0.weight"].copy()
        for br in range(1, cfg.lfem_branches):
            wsum += params[f"{prefix}.lfem.branch{br}.weight"]
        de, dw_shared, db_shared = nn.conv2d_vjp(
            e, wsum, params[f"{prefix}.lfem.branch0.bias"], _branch_spec(cfg), dpre)
        for br in range(cfg.lfem_branches):
            grads[f"{prefix}.lfem.branch{br}.weight"] = dw_shared
            grads[f"{prefix}.lfem.branch{br}.bias"] = db_shared
        if not cfg.no_self_residual:
            de = de + dpre
    dx, dew, deb = nn.conv2d_vjp(x, params[f"{prefix}.lfem.expand.weight"],
                                 params[f"{prefix}.lfem.expand.bias"],
                                 _expand_spec(cfg), de)
    grads[f"{prefix}.lfem.expand.weight"] = dew
    grads[f"{prefix}.lfem.expand.bias"] = deb
    return dx


def _block_fwd(params, prefix, x, cfg, fused):
    g1, b1 = params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"]
    t1 = nn.layer_norm(x, g1, b1)
    u, dsmu_cache = _dsmu_fwd(params, prefix, t1, cfg, fused)
    xp = u + x
    g2, b2 = params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"]
    t2 = nn.layer_norm(xp, g2, b2)
    v, lfem_cache = _lfem_fwd(params, prefix, t2, cfg, fused)
    y = v + xp
    return y, (x, dsmu_cache, xp, lfem_cache)


def _block_bwd(params, prefix, cache, dy, grads, cfg, fused):
    x, dsmu_cache, xp, lfem_cache = cache
    dt2 = _lfem_bwd(params, prefix, lfem_cache, dy, grads, cfg, fused)
    g2, b2 = params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"]
    dxp_ln, dg2, db2 = nn.layer_norm_vjp(xp, g2, b2, dt2)
    grads[f"{prefix}.ln2.gain"] = dg2
    grads[f"{prefix}.ln2.bias"] = db2
    dxp = dy + dxp_ln
    dt1 = _dsmu_bwd(params, prefix, dsmu_cache, dxp, grads, cfg, fused)
    g1, b1 = params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"]
    dx_ln, dg1, db1 = nn.layer_norm_vjp(x, g1, b1, dt1)
    grads[f"{prefix}.ln1.gain"] = dg1
    grads[f"{prefix}.ln1.bias"] = db1
    return dxp + dx_ln


# ---------------------------------------------------------------------------
# public single-piece forwards (thin wrappers over the cached versions)
# ---------------------------------------------------------------------------


def shallow_extract(model: Model, x: np.ndarray) -> np.ndarray:
    """3 -> C feature lift with the head 3x3 convolution."""
    return nn.conv2d(x, model.params["head.weight"], model.params["head.bias"],
                     _head_spec(model.config))


def dsmu_forward(model: Model, block_index: int, x: np.ndarray) -> np.ndarray:
    """Chunk -> per-chunk dilated stacks -> 1x1 mix -> GELU -> + input."""
    y, _ = _dsmu_fwd(model.params, _block_prefix(block_index), x, model.config,
                     model.fused)
    return y


def lfem_forward(model: Model, block_index: int, x: np.ndarray,
                 mode: str | None = None) -> np.ndarray:
    """Expand 1x1 -> parallel 3x3 sum (or fused 3x3) -> GELU -> SE -> reduce 1x1."""
    fused = model.fused if mode is None else (mode == "fused")
    if fused and not model.fused:
        raise ConfigError("fused mode requested but the model holds training-form weights")
    if not fused and model.fused:
        raise ConfigError("training mode requested but the model holds fused weights")
    y, _ = _lfem_fwd(model.params, _block_prefix(block_index), x, model.config, fused)
    return y


def dsmb_forward(model: Model, block_index: int, x: np.ndarray) -> np.ndarray:
    """One deep block: pre-norm DSMU residual then pre-norm LFEM residual."""
    y, _ = _block_fwd(model.params, _block_prefix(block_index), x, model.config,
                      model.fused)
    return y


def upsample_reconstruct(model: Model, f_k: np.ndarray, f_0: np.ndarray) -> np.ndarray:
    """Tail 3x3 on (f_k + f_0) to 3*scale^2 channels, then pixel shuffle."""
    if f_k.shape != f_0.shape:
        raise ShapeError("deep and shallow features disagree in extents")
    t = nn.conv2d(f_k + f_0, model.params["tail.weight"], model.params["tail.bias"],
                  _tail_spec(model.config))
    return nn.pixel_shuffle(t, model.config.scale)


def model_forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Super-resolve a (n, 3, h, w) batch to (n, 3, h*scale, w*scale)."""
    y, _ = model_forward_cached(model, x)
    return y


def model_forward_cached(model: Model, x: np.ndarray):
    nn.check_tensor4(x, "input")
    if x.shape[1] != 3:
        raise ShapeError(f"expected 3 input channels, got {x.shape[1]}")
    cfg = model.config
    params = model.params
    f0 = nn.conv2d(x, params["head.weight"], params["head.bias"], _head_spec(cfg))
    f = f0
    block_caches = []
    for i in range(cfg.num_blocks):
        f, cache = _block_fwd(params, _block_prefix(i), f, cfg, model.fused)
        block_caches.append(cache)
    skip = f + f0
    t = nn.conv2d(skip, params["tail.weight"], params["tail.bias"], _tail_spec(cfg))
    y = nn.pixel_shuffle(t, cfg.scale)
    return y, (x, block_caches, skip)


def model_backward_from_cache(model: Model, cache, upstream: np.ndarray) -> ParamStore:
    cfg = model.config
    params = model.params
    x, block_caches, skip = cache
    grads: ParamStore = {}
    dt = nn.pixel_shuffle_vjp(upstream, cfg.scale)
    dskip, dtw, dtb = nn.conv2d_vjp(skip, params["tail.weight"], params["tail.bias"],
                                    _tail_spec(cfg), dt)
    grads["tail.weight"] = dtw
    grads["tail.bias"] = dtb
    df = dskip
    df0 = dskip
    for i in reversed(range(cfg.num_blocks)):
        df = _block_bwd(params, _block_prefix(i), block_caches[i], df, grads,
                        cfg, model.fused)
    df0 = df0 + df
    _, dhw, dhb = nn.conv2d_vjp(x, params["head.weight"], params["head.bias"],
                                _head_spec(cfg), df0, need_dx=False)
    grads["head.weight"] = dhw
    grads["head.bias"] = dhb
    return grads


def model_backward(model: Model, x: np.ndarray, upstream: np.ndarray) -> ParamStore:
    """Gradient store (aligned with the parameter paths) of
    sum(upstream * model_forward(model, x))."""
    y, cache = model_forward_cached(model, x)
    if upstream.shape != y.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != output shape {y.shape}")
    return model_backward_from_cache(model, cache, upstream)


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------


def fuse_model(model: Model) -> Model:
    """Inference-form copy: dilated stacks and branch groups collapsed.

    Exact for the LFEM branches (shared padding); exact on interior
    pixels for the DSMU stacks, with a boundary margin of (K - 1) // 2.
    Fusing an already fused model is the identity.
    """
    if model.fused:
        return model.copy()
    cfg = model.config
    old = model.params
    new: ParamStore = {}
    consumed = set()
    for i in range(cfg.num_blocks):
        p = _block_prefix(i)
        for j in range(4):
            plan = cfg.stack_plan(j)
            weights = []
            biases = []
            for si in range(len(plan)):
                weights.append(old[f"{p}.dsmu.stack{j}.stage{si}.weight"])
                biases.append(old[f"{p}.dsmu.stack{j}.stage{si}.bias"])
                consumed.add(f"{p}.dsmu.stack{j}.stage{si}.weight")
                consumed.add(f"{p}.dsmu.stack{j}.stage{si}.bias")
            spec = DilatedStackSpec(plan, cfg.chunk_channels)
            dense, bias = compose_stack_to_dense(spec, weights, biases)
            new[f"{p}.dsmu.stack{j}.weight"] = dense.astype(cfg.np_dtype)
            new[f"{p}.dsmu.stack{j}.bias"] = bias.astype(cfg.np_dtype)
        ws = []
        bs = []
        for br in range(cfg.lfem_branches):
            ws.append(old[f"{p}.lfem.branch{br}.weight"])
            bs.append(old[f"{p}.lfem.branch{br}.bias"])
            consumed.add(f"{p}.lfem.branch{br}.weight")
            consumed.add(f"{p}.lfem.branch{br}.bias")
        rep_w, rep_b = fuse_parallel_3x3(ws, bs,
                                         include_identity=not cfg.no_self_residual)
        new[f"{p}.lfem.rep.weight"] = rep_w.astype(cfg.np_dtype)
        new[f"{p}.lfem.rep.bias"] = rep_b.astype(cfg.np_dtype)
    for path, value in old.items():
        if path not in consumed:
            new[path] = value.copy()
    return Model(cfg, new, fused=True)


def stack_radius(config: ModelConfig) -> int:
    """Largest half-support of the per-chunk dense kernels, (max K - 1) // 2."""
    return (max(config.stack_target(j) for j in range(4)) - 1) // 2


def fusion_margin(config: ModelConfig) -> int:
    """Low-resolution border width inside which fused and training-form
    full-model outputs may differ.

    Each block contributes a fresh boundary band of ``stack_radius`` (the
    per-stage zero padding of a stack is not equivalent to the single
    padding of its dense kernel) and every 3x3 convolution downstream of
    a contaminated band spreads it inward by one pixel, so the band
    accumulates across depth: blocks * (stack_radius + 1) plus one for
    the tail convolution. Multiply by ``scale`` for the margin in output
    pixels. Models with the squeeze-excitation gate enabled additionally
    leak a small boundary-dependent difference into every pixel through
    the global average pool, so a strict interior-equivalence bound only
    holds for ``no_se`` configurations; see the fusion notes in README.
    """
    return config.num_blocks * (stack_radius(config) + 1) + 1
