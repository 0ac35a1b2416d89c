"""Command-line surface: model summaries, gradient checks, micro
benchmarks, toy training, and weights import/export.

Exit codes: 0 success, 1 usage, 2 validation/config, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import statistics
import sys
import time
from dataclasses import replace

import numpy as np

from . import backend, ops
from .checks import BLOCK_CHECKS, run_checks
from .costs import count_flops, count_params
from .errors import (ConfigError, FormatError, NumericError, ShapeError,
                     UsageError)
from .mamba import build_hybrid
from .model import ModelConfig, VARIANTS, build, variant_config
from .nn import zero_init
from .tensor import Tensor
from .train import (build_toy, evaluate, synthetic_two_class,
                    toy_backbone_config, train)
from .weights_io import load_weights, save_weights

_CONFIG_KEYS = {
    "variant", "base_dim", "depths", "heads", "windows", "mlp_ratio",
    "img_size", "num_classes", "se_ratio", "downsampler", "mixer",
}
_DTYPES = {"f32": np.float32, "f64": np.float64}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config_file(path: str) -> ModelConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = (variant_config(raw.pop("variant")) if "variant" in raw
            else ModelConfig())
    for key in ("depths", "heads", "windows"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    cfg = replace(base, **raw)
    cfg.validate()
    return cfg


def resolve_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        cfg = load_config_file(args.config)
    elif getattr(args, "variant", None):
        if args.variant not in VARIANTS:
            raise UsageError(
                f"unknown variant {args.variant!r}; available: "
                f"{', '.join(sorted(VARIANTS))}")
        cfg = variant_config(args.variant)
    else:
        raise UsageError("one of --variant or --config is required")
    if getattr(args, "size", None):
        cfg = replace(cfg, img_size=args.size)
    cfg.validate()
    return cfg


def _build_any(cfg: ModelConfig, seed: int, dtype):
    if cfg.mixer == "mamba_hybrid":
        return build_hybrid(cfg, seed=seed, dtype=dtype)
    return build(cfg, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# commands

def cmd_summary(args) -> int:
    cfg = resolve_config(args)
    if cfg.mixer != "gcvit":
        raise ConfigError("summary covers the windowed-attention backbone; "
                          "set mixer=gcvit")
    with zero_init():  # counting needs shapes only
        model = build(cfg, seed=args.seed, dtype=_DTYPES[args.dtype])
    params = count_params(model)
    flops = count_flops(model)
    payload = {
        "variant": cfg.name,
        "img_size": cfg.img_size,
        "windows": list(cfg.resolved_windows()),
        "mlp_ratio": cfg.mlp_ratio,
        "stages": [],
        "params_total": params.params_total,
        "flops_total_mac": flops.flops_total,
        "flops_attention_mac": flops.flops_attn,
        "flops_mlp_mac": flops.flops_mlp,
        "flops_conv_mac": flops.flops_conv,
    }
    for sp, sf in zip(params.per_stage, flops.per_stage):
        payload["stages"].append({
            "stage": sp.stage,
            "blocks_local": sp.blocks_local,
            "blocks_global": sp.blocks_global,
            "params": sp.params_total,
            "attn_flops_mac": sf.flops_attn,
            "attn_flops_closed_form_mac": sf.flops_attn_closed,
            "mlp_flops_mac": sf.flops_mlp,
            "conv_flops_mac": sf.flops_conv,
        })
    if args.json:
        print(json.dumps(payload, indent=2))
        return 0
    print(f"variant {cfg.name}  image {cfg.img_size}  "
          f"windows {payload['windows']}  mlp_ratio {cfg.mlp_ratio}")
    print(f"{'stage':>5} {'local':>6} {'global':>7} {'params':>12} "
          f"{'attn MAC':>14} {'closed form':>14} {'mlp MAC':>14} "
          f"{'conv MAC':>14}")
    for s in payload["stages"]:
        print(f"{s['stage']:>5} {s['blocks_local']:>6} "
              f"{s['blocks_global']:>7} {s['params']:>12,} "
              f"{s['attn_flops_mac']:>14,} "
              f"{s['attn_flops_closed_form_mac']:>14,} "
              f"{s['mlp_flops_mac']:>14,} {s['conv_flops_mac']:>14,}")
    print(f"total params {params.params_total:,} "
          f"({params.params_total / 1e6:.2f} M)")
    print(f"total FLOPs  {flops.flops_total:,} MAC "
          f"({flops.flops_total / 1e9:.3f} G)")
    return 0


def cmd_gradcheck(args) -> int:
    blocks = None
    if args.block:
        if args.block not in BLOCK_CHECKS:
            raise UsageError(
                f"unknown block {args.block!r}; available: "
                f"{', '.join(BLOCK_CHECKS)}")
        blocks = [args.block]
    results = run_checks(blocks=blocks,
                         inject_wrong_gradient=args.inject_wrong_gradient)
    threshold = 1e-5
    failed = [name for name, err in results.items() if err >= threshold]
    if args.json:
        print(json.dumps({"max_rel_error": results, "failed": failed}))
    else:
        for name, err in results.items():
            mark = "ok" if err < threshold else "FAIL"
            print(f"{name:>18}: max rel error {err:.3e}  [{mark}]")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}",
              file=sys.stderr)
        return 3
    return 0


def _checksum(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    backends = ([args.backend] if args.backend != "both"
                else ["numpy", "numba"])
    rows = []
    for name in backends:
        with backend.use(name):
            model = _build_any(cfg, seed=args.seed, dtype=_DTYPES[args.dtype])
            analytic = (count_flops(model).flops_total * args.batch
                        if cfg.mixer == "gcvit" else None)
            rng = np.random.default_rng(args.seed)
            x = Tensor(rng.standard_normal(
                (args.batch, 3, cfg.img_size, cfg.img_size)
            ).astype(_DTYPES[args.dtype]))
            for _ in range(max(1, args.warmup)):
                out = model(x)
            with ops.count_macs() as counter:
                out = model(x)
            measured = counter.macs
            times = []
            for _ in range(max(10, args.iters)):
                t0 = time.perf_counter()
                out = model(x)
                times.append(time.perf_counter() - t0)
            times.sort()
            median = statistics.median(times)
            p95 = times[min(len(times) - 1, int(round(0.95 * len(times))))]
            rows.append({
                "backend": backend.active(),
                "batch": args.batch,
                "median_ms": median * 1e3,
                "p95_ms": p95 * 1e3,
                "analytic_mac": analytic,
                "measured_mac": measured,
                "gmac_per_s": measured / median / 1e9,
                "output_checksum": _checksum(out.data),
            })
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    for r in rows:
        print(f"[{r['backend']}] batch {r['batch']}  "
              f"median {r['median_ms']:.2f} ms  p95 {r['p95_ms']:.2f} ms")
        analytic = ("n/a" if r["analytic_mac"] is None
                    else f"{r['analytic_mac']:,}")
        print(f"  analytic {analytic} MAC  measured {r['measured_mac']:,} "
              f"MAC  rate {r['gmac_per_s']:.2f} GMAC/s")
        print(f"  output checksum {r['output_checksum']}")
    if len(rows) == 2:
        speedup = rows[0]["median_ms"] / rows[1]["median_ms"]
        print(f"numba speedup over numpy: {speedup:.2f}x")
    return 0


def cmd_train_toy(args) -> int:
    cfg = (load_config_file(args.config) if args.config
           else toy_backbone_config())
    if getattr(args, "size", None):
        cfg = replace(cfg, img_size=args.size)
    images, labels = synthetic_two_class(seed=args.seed, n=256,
                                         size=cfg.img_size)
    model = build_toy(cfg, seed=args.seed, dtype=np.float64)
    losses = train(model, images, labels, steps=args.steps, lr=args.lr,
                   seed=args.seed,
                   log=lambda s, v: print(f"step {s:>4}  loss {v:.4f}"))
    final_loss, acc = evaluate(model, images, labels)
    print(f"initial loss {losses[0]:.4f}  final loss {final_loss:.4f}  "
          f"train accuracy {acc:.3f}")
    if args.json:
        print(json.dumps({"losses": losses, "final_loss": final_loss,
                          "accuracy": acc}))
    if not (final_loss < losses[0]):
        print("training did not reduce the loss", file=sys.stderr)
        return 3
    return 0


def cmd_export(args) -> int:
    cfg = resolve_config(args)
    if not args.out:
        raise UsageError("export requires --out PATH")
    model = _build_any(cfg, seed=args.seed, dtype=_DTYPES[args.dtype])
    save_weights(model, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_import(args) -> int:
    cfg = resolve_config(args)
    if not args.out:
        raise UsageError("import requires --out PATH (the weights file)")
    model = _build_any(cfg, seed=args.seed, dtype=_DTYPES[args.dtype])
    load_weights(model, args.out)
    rng = np.random.default_rng(args.seed)
    x = Tensor(rng.standard_normal(
        (1, 3, cfg.img_size, cfg.img_size)).astype(_DTYPES[args.dtype]))
    out = model(x)
    print(f"loaded {args.out}; forward checksum {_checksum(out.data)}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="gcvk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, size_default=None):
        p.add_argument("--variant", help=f"one of {', '.join(sorted(VARIANTS))}")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--size", type=int, default=size_default,
                       help="input image size override")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dtype", choices=sorted(_DTYPES), default="f32")
        p.add_argument("--json", action="store_true",
                       help="machine-readable output")

    p = sub.add_parser("summary", help="per-stage parameter/FLOP table")
    common(p)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("gradcheck", help="finite-difference checks per block")
    p.add_argument("--block", help=f"check one of: {', '.join(BLOCK_CHECKS)}")
    p.add_argument("--json", action="store_true")
    p.add_argument("--inject-wrong-gradient", metavar="BLOCK",
                   help=argparse.SUPPRESS)  # negative-control test hook
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="forward-pass timing")
    common(p)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--backend", choices=["auto", "numpy", "numba", "both"],
                   default="auto")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-toy",
                       help="SGD on the synthetic two-class set")
    p.add_argument("--config", help="JSON config file (default: toy backbone;"
                                    " set mixer=mamba_hybrid for the hybrid)")
    p.add_argument("--size", type=int)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("export", help="write model weights to --out")
    common(p)
    p.add_argument("--out", help="destination path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("import", help="load weights from --out and run a "
                                      "checksummed forward")
    common(p)
    p.add_argument("--out", help="weights file path")
    p.set_defaults(func=cmd_import)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ShapeError, FormatError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
