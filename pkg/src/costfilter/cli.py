"""Command-line entry point: match, eval, gradcheck, train-toy, bench.

Flags can also be supplied through a JSON config file (--config); command-line
flags take precedence and the effective configuration is echoed to stderr as
one JSON line. Exit codes: 0 ok, 2 usage/config error, 3 data error,
4 internal check failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cost_volume import build_correlation
from .disparity import DisparityMap
from .errors import ConfigError, DataError, FormatError
from .gradcheck import REGISTRY, check
from .io_formats import (WeightsFile, read_disparity, read_image, read_weights,
                         write_disparity, write_weights)
from .metrics import evaluate
from .pipeline import (FILTERS, PipelineConfig, init_params, run_forward)
from .tensor_ops import WindowSpec
from .training import TrainConfig, train_pipeline

CONFIG_DEFAULTS = {
    "filter": "sga",
    "max_disp": 192,
    "downsample": 2,
    "window": {"s": 5, "dilation": 2},
    "sabf": {"sigma_s": 0.7, "sigma_r": 0.1},
    "bad_rule": "or",
    "weights": None,
    "seeds": 20,
    "threads": 1,
}


def _merge_config(defaults: dict, override: dict, path="") -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in merged:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(merged[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            merged[key] = _merge_config(merged[key], value, where)
        else:
            merged[key] = value
    return merged


def load_config(args) -> dict:
    cfg = copy.deepcopy(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge_config(cfg, doc)
    # command-line flags win over the config file
    flag_map = {
        "filter": ("filter",), "max_disp": ("max_disp",),
        "downsample": ("downsample",), "window_size": ("window", "s"),
        "dilation": ("window", "dilation"), "sigma_s": ("sabf", "sigma_s"),
        "sigma_r": ("sabf", "sigma_r"), "bad_rule": ("bad_rule",),
        "weights": ("weights",), "seeds": ("seeds",), "threads": ("threads",),
    }
    for flag, keys in flag_map.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        node = cfg
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    return cfg


def _echo_config(cfg: dict):
    print(json.dumps({"config": cfg}, sort_keys=True), file=sys.stderr)


def _pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(
        filter=cfg["filter"], max_disp=cfg["max_disp"],
        downsample=cfg["downsample"],
        win=WindowSpec(cfg["window"]["s"], cfg["window"]["dilation"]),
        sigma_s=cfg["sabf"]["sigma_s"], sigma_r=cfg["sabf"]["sigma_r"],
        threads=cfg["threads"])


# ---------------------------------------------------------------------------
# commands

def cmd_match(args) -> int:
    cfg = load_config(args)
    _echo_config(cfg)
    left = read_image(args.left)
    right = read_image(args.right)
    if left.shape != right.shape:
        raise ConfigError(f"input dimensions differ: {left.shape[1:]} vs "
                          f"{right.shape[1:]}")
    pcfg = _pipeline_config(cfg)
    if cfg["weights"]:
        params = dict(read_weights(cfg["weights"]).tensors)
    elif pcfg.filter == "none":
        print(f"match: no weights given, initializing from seed {cfg['seeds']}",
              file=sys.stderr)
        params = init_params(pcfg, seed=int(cfg["seeds"]))
    else:
        raise ConfigError(f"filter {pcfg.filter!r} is learned: --weights is required")
    st = run_forward(left, right, params, pcfg)
    write_disparity(st.disp, args.out)
    print(f"match: wrote {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args)
    _echo_config(cfg)
    pred = read_disparity(args.pred)
    gt = read_disparity(args.gt, d_max=cfg["max_disp"])
    mask = None
    if args.mask:
        m = read_image(args.mask)
        mask = m[0] > 0
    report = evaluate(pred, gt, mask=mask, rule=cfg["bad_rule"])
    print(json.dumps(report.as_dict()))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args)
    _echo_config(cfg)
    names = list(REGISTRY) if args.op == "all" else [args.op]
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise ConfigError(f"unknown op(s): {', '.join(unknown)}; "
                          f"known: {', '.join(REGISTRY)}")
    n_seeds = int(cfg["seeds"])
    failures = 0
    print(f"{'op':<20} {'seeds':>5} {'max rel err':>12} {'jitter':>7} {'status':>7}")
    for name in names:
        worst = 0.0
        ok = True
        jitter = False
        for seed in range(n_seeds):
            rep = check(name, seed, tol=args.tol)
            worst = max(worst, rep.worst_rel())
            jitter = rep.tie_jitter
            ok = ok and rep.passed
        failures += 0 if ok else 1
        print(f"{name:<20} {n_seeds:>5} {worst:>12.3e} {str(jitter):>7} "
              f"{'PASS' if ok else 'FAIL':>7}")
    return 0 if failures == 0 else 4


def cmd_train_toy(args) -> int:
    cfg = load_config(args)
    _echo_config(cfg)
    tcfg = TrainConfig(
        filter=cfg["filter"], steps=args.steps, lr=args.lr, momentum=args.momentum,
        max_disp=cfg["max_disp"], downsample=cfg["downsample"], seed=args.seed,
        win=WindowSpec(cfg["window"]["s"], cfg["window"]["dilation"]),
        sigma_s=cfg["sabf"]["sigma_s"], sigma_r=cfg["sabf"]["sigma_r"],
        threads=cfg["threads"])
    result = train_pipeline(tcfg)
    if args.out_weights:
        write_weights(WeightsFile(result.params), args.out_weights)
        print(f"train-toy: wrote weights to {args.out_weights}", file=sys.stderr)
    if args.out_curve:
        lines = "".join(f"{i},{loss}\n" for i, loss in enumerate(result.losses))
        Path(args.out_curve).write_text("step,loss\n" + lines)
        print(f"train-toy: wrote loss curve to {args.out_curve}", file=sys.stderr)
    print(f"train-toy: final loss {result.losses[-1]:.6f}, "
          f"training EPE {result.final_epe:.4f} px", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args)
    _echo_config(cfg)
    try:
        h, w = (int(t) for t in args.size.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--size must look like 96x320, got {args.size!r}") from None
    pcfg = _pipeline_config(cfg)
    pcfg = PipelineConfig(filter=pcfg.filter, max_disp=args.disp,
                          downsample=pcfg.downsample, win=pcfg.win,
                          sigma_s=pcfg.sigma_s, sigma_r=pcfg.sigma_r,
                          threads=pcfg.threads)
    rng = np.random.default_rng(int(cfg["seeds"]))
    left = rng.random((3, h, w), dtype=np.float32)
    right = rng.random((3, h, w), dtype=np.float32)
    params = init_params(pcfg, seed=int(cfg["seeds"]))

    timings: dict[str, list] = {}
    for _ in range(args.iters):
        t0 = time.perf_counter()
        st = run_forward(left, right, params, pcfg)
        t1 = time.perf_counter()
        timings.setdefault("pipeline_total", []).append(1e3 * (t1 - t0))
        # stage timings, measured separately on the same inputs
        from .features import extract_features_forward
        from .pipeline import _feat, _filter_forward, standardize
        li, ri = standardize(left), standardize(right)
        fp = _feat(params, pcfg)
        t0 = time.perf_counter()
        fL, _ = extract_features_forward(li, fp)
        fR, _ = extract_features_forward(ri, fp)
        t1 = time.perf_counter()
        sim = build_correlation(fL, fR, pcfg.volume_disp)
        t2 = time.perf_counter()
        st2 = copy.copy(st)
        st2.cost = -sim.data
        st2.fL, st2.left_std = fL, li
        _filter_forward(st2, params, pcfg)
        t3 = time.perf_counter()
        from .regression import soft_argmin_forward
        soft_argmin_forward(st2.cost)
        t4 = time.perf_counter()
        timings.setdefault("features", []).append(1e3 * (t1 - t0))
        timings.setdefault("cost_volume", []).append(1e3 * (t2 - t1))
        timings.setdefault(f"filter[{pcfg.filter}]", []).append(1e3 * (t3 - t2))
        timings.setdefault("soft_argmin", []).append(1e3 * (t4 - t3))
    print(f"{'stage':<20} {'median ms':>12} {'max ms':>12}  ({args.iters} iters, "
          f"{h}x{w}, D={args.disp})")
    for stage, vals in timings.items():
        print(f"{stage:<20} {np.median(vals):>12.2f} {max(vals):>12.2f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="costfilter",
                                description="stereo matching by adaptive "
                                            "cost-volume filtering")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags take precedence")
        sp.add_argument("--filter", choices=FILTERS)
        sp.add_argument("--max-disp", dest="max_disp", type=int)
        sp.add_argument("--downsample", type=int)
        sp.add_argument("--window-size", dest="window_size", type=int)
        sp.add_argument("--dilation", type=int)
        sp.add_argument("--sigma-s", dest="sigma_s", type=float)
        sp.add_argument("--sigma-r", dest="sigma_r", type=float)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--seeds", type=int)

    sp = sub.add_parser("match", help="compute a disparity map for a stereo pair")
    common(sp)
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--out", required=True, help="output .pfm or .png")
    sp.add_argument("--weights")
    sp.set_defaults(fn=cmd_match)

    sp = sub.add_parser("eval", help="evaluate a disparity map against ground truth")
    common(sp)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--mask", help="8-bit mask image; nonzero pixels are evaluated")
    sp.add_argument("--bad-rule", dest="bad_rule", choices=("or", "and"))
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference certification of "
                                          "backward passes")
    common(sp)
    sp.add_argument("--op", default="all")
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("train-toy", help="train the pipeline on a synthetic "
                                          "stereogram")
    common(sp)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--out-weights", dest="out_weights")
    sp.add_argument("--out-curve", dest="out_curve")
    sp.set_defaults(fn=cmd_train_toy)

    sp = sub.add_parser("bench", help="wall-time table per pipeline stage")
    common(sp)
    sp.add_argument("--size", default="96x320")
    sp.add_argument("--disp", type=int, default=48)
    sp.add_argument("--iters", type=int, default=3)
    sp.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def entry():  # console-script wrapper
    sys.exit(main())


if __name__ == "__main__":
    entry()
