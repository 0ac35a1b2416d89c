"""Analytic parameter and FLOP accounting for built backbones.

FLOPs are multiply-accumulate counts (the convention of the complexity
closed form and the published model tables); bias additions,
normalization, activations and pooling are not counted.  The attention
category reports two numbers per stage: the exact projection+score MACs
(which an instrumented matmul counter reproduces to the integer) and
the per-block closed form 2HW(2C^2 + hwC) times the block count.  The
closed form assumes a query projection in every block, so it is an
upper bound for global blocks, whose query arrives precomputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .model import GlobalContextViT, Stage


def attention_closed_form(H: int, W: int, C: int, h: int, w: int) -> int:
    """Per-block attention complexity 2HW(2C^2 + hwC)."""
    return 2 * H * W * (2 * C * C + h * w * C)


def local_attention_macs(res: int, C: int, win: int) -> int:
    hw = win * win
    return 4 * res * res * C * C + 2 * hw * res * res * C


def global_attention_macs(res: int, C: int, win: int) -> int:
    # no query projection: kv (2C^2/token) instead of qkv (3C^2/token)
    return local_attention_macs(res, C, win) - res * res * C * C


def _fmbconv_macs(dim: int, ext: int, se_ratio: int) -> int:
    dw = 9 * dim * ext * ext
    se = 2 * dim * (dim // se_ratio)
    pw = dim * dim * ext * ext
    return dw + se + pw


@dataclass
class StageCost:
    stage: int
    blocks_local: int
    blocks_global: int
    params_attn_local: int = 0
    params_attn_global: int = 0
    params_mlp: int = 0
    params_conv: int = 0
    params_norm: int = 0
    flops_attn: int = 0
    flops_attn_closed: int = 0
    flops_mlp: int = 0
    flops_conv: int = 0

    @property
    def params_total(self) -> int:
        return (self.params_attn_local + self.params_attn_global
                + self.params_mlp + self.params_conv + self.params_norm)

    @property
    def flops_total(self) -> int:
        return self.flops_attn + self.flops_mlp + self.flops_conv


@dataclass
class CostReport:
    variant: str
    img_size: int
    per_stage: list[StageCost] = field(default_factory=list)
    params_stem: int = 0
    params_head: int = 0
    flops_stem: int = 0
    flops_head: int = 0

    @property
    def params_total(self) -> int:
        return (self.params_stem + self.params_head
                + sum(s.params_total for s in self.per_stage))

    @property
    def flops_attn(self) -> int:
        return sum(s.flops_attn for s in self.per_stage)

    @property
    def flops_mlp(self) -> int:
        return sum(s.flops_mlp for s in self.per_stage) + self.flops_head

    @property
    def flops_conv(self) -> int:
        return sum(s.flops_conv for s in self.per_stage) + self.flops_stem

    @property
    def flops_total(self) -> int:
        return self.flops_attn + self.flops_mlp + self.flops_conv


def count_params(model: GlobalContextViT) -> CostReport:
    """Exact scalar-weight counts grouped per stage and block kind."""
    report = CostReport(model.config.name, model.config.img_size)
    report.params_stem = model.stem.num_params()
    report.params_head = model.norm.num_params() + model.head.num_params()
    for i, stage in enumerate(model.stages):
        sc = StageCost(
            stage=i + 1,
            blocks_local=sum(1 for b in stage.blocks if b.kind == "local"),
            blocks_global=sum(1 for b in stage.blocks if b.kind == "global"),
        )
        sc.params_conv = (stage.reduce.num_params()
                          + stage.token_gen.num_params())
        for block in stage.blocks:
            attn_params = block.attn.num_params()
            if block.kind == "local":
                sc.params_attn_local += attn_params
            else:
                sc.params_attn_global += attn_params
            sc.params_mlp += block.mlp.num_params()
            sc.params_norm += block.norm1.num_params() + block.norm2.num_params()
        report.per_stage.append(sc)
    return report


def _stage_flops(stage: Stage, se_ratio: int, mlp_hidden: int) -> StageCost:
    res, dim, win = stage.resolution, stage.dim, stage.window
    sc = StageCost(
        stage=0,
        blocks_local=sum(1 for b in stage.blocks if b.kind == "local"),
        blocks_global=sum(1 for b in stage.blocks if b.kind == "global"),
    )
    # entry reducer runs at the incoming (pre-halving) resolution
    ext_in = res * 2
    c_in = stage.reduce.conv.w.shape[1]
    c_out = stage.reduce.conv.w.shape[0]
    conv_ext = res if stage.reduce.mode == "conv" else ext_in
    sc.flops_conv += _fmbconv_macs(c_in, ext_in, se_ratio)
    sc.flops_conv += 9 * c_in * c_out * conv_ext * conv_ext
    # query generator: one fused block per halving step
    ext = res
    for _ in stage.token_gen.blocks:
        sc.flops_conv += _fmbconv_macs(dim, ext, se_ratio)
        ext //= 2
    per_local = local_attention_macs(res, dim, win)
    per_global = global_attention_macs(res, dim, win)
    sc.flops_attn = (sc.blocks_local * per_local
                     + sc.blocks_global * per_global)
    sc.flops_attn_closed = (attention_closed_form(res, res, dim, win, win)
                            * stage.depth)
    sc.flops_mlp = stage.depth * 2 * res * res * dim * mlp_hidden
    return sc


def count_flops(model: GlobalContextViT, img_size: int | None = None
                ) -> CostReport:
    """Analytic multiply-accumulate counts for one image."""
    cfg = model.config
    if img_size is not None and img_size != cfg.img_size:
        raise ConfigError(
            f"model was built for {cfg.img_size}x{cfg.img_size} inputs "
            f"(window sizes and query-generator depth are baked in); "
            f"rebuild for {img_size}")
    report = CostReport(cfg.name, cfg.img_size)
    half = cfg.img_size // 2
    report.flops_stem = (9 * 3 * cfg.base_dim * half * half
                         + _fmbconv_macs(cfg.base_dim, half, cfg.se_ratio))
    for i, stage in enumerate(model.stages):
        hidden = model.stages[i].blocks[0].mlp.fc1.w.shape[1]
        sc = _stage_flops(stage, cfg.se_ratio, hidden)
        sc.stage = i + 1
        report.per_stage.append(sc)
    report.flops_head = model.stages[-1].dim * cfg.num_classes
    return report
