"""Command-line entry point: ``smalltarget <command> [flags]``.

Exit codes: 0 success, 1 usage error (bad flag, missing file, malformed
config), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_file
from . import gradcheck
from .data import (MODES, Dataset, SceneSpec, generate_dataset, read_ppm, write_pgm,
                   write_ppm)
from .detect import Grid
from .fusion import MEPF, REFERENCE_PARAM_COUNT, MultispectralPair, mepf_param_count
from .model import VARIANTS
from .scan import bench_scan, linear_fit_r2, write_bench_csv
from .tensor import no_grad


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _print_config(command: str, items: dict) -> None:
    print(f"[{command}] resolved config")
    for k, v in items.items():
        print(f"  {k} = {v}")


def _need_file(flag: str, path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return p


def _need_dir(flag: str, path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{flag}: no such directory {path}")
    return p


def _normalize(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    return (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)


def _write_gray(path, img: np.ndarray) -> None:
    write_ppm(path, np.repeat(img[None], 3, axis=0))


def _upsample(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    fy, fx = size[0] // img.shape[0], size[1] // img.shape[1]
    return np.kron(img, np.ones((fy, fx)))


def _load_pair(rgb_flag, rgb_path, ir_flag, ir_path) -> MultispectralPair:
    rgb = read_ppm(_need_file(rgb_flag, rgb_path))
    ir = read_ppm(_need_file(ir_flag, ir_path))
    if rgb.shape != ir.shape:
        raise UsageError(f"{ir_flag}: size {ir.shape[1:]} differs from {rgb_flag} {rgb.shape[1:]}")
    return MultispectralPair(rgb, ir)


# ---------------------------------------------------------------- commands

def cmd_fuse(args) -> int:
    pair = _load_pair("--rgb", args.rgb, "--ir", args.ir)
    if args.ckpt:
        from .train import load_model
        model = load_model(_need_file("--ckpt", args.ckpt))
        if not isinstance(model.fusion, MEPF):
            raise UsageError(f"--ckpt: {args.ckpt} holds a model without learned fusion")
        mepf = model.fusion
    else:
        mepf = MEPF(rng=np.random.default_rng(args.seed))
    _print_config("fuse", {"rgb": args.rgb, "ir": args.ir, "out": args.out,
                           "ckpt": args.ckpt or "(fresh MEPF)", "seed": args.seed,
                           "mepf_params": mepf.num_parameters()})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mepf.eval()
    with no_grad():
        fused = mepf.fuse(pair).data[0]
    for c in range(fused.shape[0]):
        _write_gray(out / f"fused_c{c}.ppm", _normalize(fused[c]))
    write_ppm(out / "preview.ppm", _normalize(fused[:3]))
    m_rgb, m_ir = mepf.last_masks
    _write_gray(out / "mask_rgb.ppm", m_rgb[0].mean(axis=0))
    _write_gray(out / "mask_ir.ppm", m_ir[0].mean(axis=0))
    factor = mepf.last_factor.reshape(-1)
    (out / "modal_factor.txt").write_text(" ".join(f"{f:.6f}" for f in factor) + "\n")
    print(f"modal_factor: {' '.join(f'{f:.4f}' for f in factor)}")
    print(f"wrote {fused.shape[0]} fused channels, preview and masks to {out}")
    return 0


def cmd_gen_data(args) -> int:
    spec = SceneSpec(size=args.size, num_classes=args.classes, density=args.density,
                     clutter=args.clutter, mode=args.mode, small_targets=not args.large)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.n < 1:
        raise UsageError("--n: must be >= 1")
    _print_config("gen-data", {"n": args.n, "size": args.size, "seed": args.seed,
                               "out": args.out, **{k: getattr(spec, k) for k in
                                                   ("num_classes", "density", "clutter", "mode",
                                                    "small_targets")}})
    dirs = generate_dataset(args.out, args.n, args.seed, spec)
    print(f"wrote {len(dirs)} scenes to {args.out}")
    return 0


def _train_configs(args):
    if args.cfg:
        try:
            tc, mc = config_file.load(_need_file("--cfg", args.cfg))
        except config_file.ConfigFileError as exc:
            raise UsageError(f"--cfg: {exc}") from None
    else:
        tc, mc = config_file.parse("")
    if args.ablation:
        mc.variant = args.ablation
    if args.seed is not None:
        tc.seed = args.seed
    if args.epochs is not None:
        tc.epochs = args.epochs
    mc.seed = tc.seed
    try:
        tc.validate()
        mc.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return tc, mc


def cmd_train(args) -> int:
    from .train import evaluate, save_model, train
    from .model import Detector

    data_dir = _need_dir("--data", args.data)
    tc, mc = _train_configs(args)
    data = Dataset.load(data_dir)
    max_class = max((b.class_id for bs in data.boxes for b in bs), default=0)
    if max_class >= mc.num_classes:
        raise UsageError(f"--data: class id {max_class} needs num_classes > {max_class}")
    log = args.log or str(args.out) + ".csv"
    _print_config("train", {"data": args.data, "out": args.out, "log": log,
                            "scenes": len(data), **dict(
                                line.split("=", 1) for line in config_file.dump(tc, mc).splitlines()),
                            "seed": tc.seed})
    model = Detector(mc)
    result = train(model, data, tc, log_path=log)
    save_model(model, args.out)
    print(f"trained {result.steps} steps in {result.seconds:.1f}s, "
          f"final loss {result.losses[-1]:.4f}; checkpoint {args.out}")
    if args.val:
        print(evaluate(model, Dataset.load(_need_dir("--val", args.val)), tc.conf_thresh,
                       tc.nms_iou).to_text())
    return 0


def _mepf_lines() -> list[str]:
    count = MEPF().num_parameters()
    assert count == mepf_param_count()
    return [f"mepf_params: {count}", f"mepf_target: {REFERENCE_PARAM_COUNT}",
            f"mepf_delta: {count - REFERENCE_PARAM_COUNT:+d}"]


def cmd_eval(args) -> int:
    from .train import evaluate, load_model

    ckpt = _need_file("--ckpt", args.ckpt)
    data_dir = _need_dir("--data", args.data)
    _print_config("eval", {"ckpt": args.ckpt, "data": args.data, "conf": args.conf,
                           "nms_iou": args.nms_iou, "seed": args.seed})
    model = load_model(ckpt)
    report = evaluate(model, Dataset.load(data_dir), args.conf, args.nms_iou)
    report.extra["variant"] = model.cfg.variant
    report.extra.pop("mepf_params", None)
    print(report.to_text())
    print("\n".join(_mepf_lines()))
    return 0


def cmd_gradcheck(args) -> int:
    names = gradcheck.MODULES if args.module == "all" else (args.module,)
    _print_config("gradcheck", {"module": args.module, "seed": args.seed,
                                "dtype": "float64", "tolerance": gradcheck.TOLERANCE,
                                "composite_tolerance": gradcheck.COMPOSITE_TOLERANCE})
    ok = True
    for name in names:
        r = gradcheck.run(name, args.seed)
        print(r.line())
        ok &= r.passed
    return 0 if ok else 2


def cmd_bench_scan(args) -> int:
    try:
        lengths = [int(s) for s in args.lengths.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--lengths: expected comma-separated integers, got {args.lengths!r}") from None
    if not lengths or min(lengths) < 1:
        raise UsageError("--lengths: need at least one positive length")
    _print_config("bench-scan", {"lengths": lengths, "csv": args.csv, "channels": args.channels,
                                 "state_dim": args.state_dim, "repeats": args.repeats,
                                 "seed": args.seed, "attention": not args.no_attention})
    rows = bench_scan(lengths, args.channels, args.state_dim, args.repeats, args.seed,
                      attention=not args.no_attention)
    if args.csv:
        write_bench_csv(rows, args.csv)
    print("tokens,ss2d_ns,attention_ns")
    for r in rows:
        print(f"{r.tokens},{r.ss2d_ns},{r.attention_ns}")
    if len(rows) >= 3:
        print(f"ss2d_linear_r2: {linear_fit_r2([r.tokens for r in rows], [r.ss2d_ns for r in rows]):.4f}")
    if not args.no_attention:
        last = rows[-1]
        print(f"attention_over_ss2d_at_{last.tokens}: {last.attention_ns / last.ss2d_ns:.2f}")
    return 0


def cmd_viz(args) -> int:
    from .train import load_model

    image = Path(args.image)
    if image.is_dir():
        rgb_path, ir_path = image / "rgb.ppm", image / "ir.ppm"
    else:
        rgb_path, ir_path = image, image.with_name("ir.ppm")
    pair = _load_pair("--image", str(rgb_path), "--image (ir.ppm beside it)", str(ir_path))
    model = load_model(_need_file("--ckpt", args.ckpt))
    _print_config("viz", {"ckpt": args.ckpt, "image": args.image, "out": args.out,
                          "variant": model.cfg.variant, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    H, W = pair.rgb.shape[2:]
    with no_grad():
        raw = model(pair.stacked()).data[0]
    grid = Grid.for_image(H, W)
    start = 0
    written = []
    for (gh, gw), s in zip(grid.shapes, (8, 16, 32)):
        obj = 1.0 / (1.0 + np.exp(-raw[4, start:start + gh * gw].reshape(gh, gw)))
        start += gh * gw
        write_pgm(out / f"objectness_s{s}.pgm", _upsample(obj, (H, W)))
        written.append(f"objectness_s{s}.pgm")
    if isinstance(model.fusion, MEPF) and model.fusion.last_masks is not None:
        m_rgb, m_ir = model.fusion.last_masks
        write_pgm(out / "mask_rgb.pgm", m_rgb[0].mean(axis=0))
        write_pgm(out / "mask_ir.pgm", m_ir[0].mean(axis=0))
        written += ["mask_rgb.pgm", "mask_ir.pgm"]
    for i, stage in enumerate(model.backbone.stages):
        feat = stage.last_output[0].mean(axis=0)
        write_pgm(out / f"stage{i + 1}_mean.pgm", _upsample(_normalize(feat), (H, W)))
        written.append(f"stage{i + 1}_mean.pgm")
        carg = stage.blocks[-1].carg
        if carg is not None and "x_spatialattention" in carg.last:
            att = carg.last["x_spatialattention"][0, 0]
            write_pgm(out / f"spatial_attention_stage{i + 1}.pgm", _upsample(att, (H, W)))
            written.append(f"spatial_attention_stage{i + 1}.pgm")
    print(f"wrote {', '.join(written)} to {out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smalltarget", description="Multispectral small-target detection toolkit.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fuse", help="fuse a registered RGB/IR pair with MEPF")
    f.add_argument("--rgb", required=True, help="RGB image (PPM)")
    f.add_argument("--ir", required=True, help="IR image (PPM, same size)")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--ckpt", help="model checkpoint whose MEPF weights to use (default: fresh MEPF)")
    f.add_argument("--seed", type=int, default=0, help="seed for a fresh MEPF (default 0)")
    f.set_defaults(func=cmd_fuse)

    g = sub.add_parser("gen-data", help="write a synthetic multispectral dataset")
    g.add_argument("--n", type=int, required=True, help="number of scenes")
    g.add_argument("--size", type=int, default=128, help="image side, >= 64 and divisible by 32")
    g.add_argument("--seed", type=int, default=0, help="dataset seed (default 0)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--classes", type=int, default=3, help="number of classes, 2-5 (default 3)")
    g.add_argument("--density", type=int, default=4, help="targets per scene (default 4)")
    g.add_argument("--clutter", type=int, default=2, help="IR-cold distractors per scene (default 2)")
    g.add_argument("--mode", default="mixed", choices=MODES + ("mixed",),
                   help="illumination mode (default mixed)")
    g.add_argument("--large", action="store_true", help="allow targets above the small-target bound")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a detector")
    t.add_argument("--data", required=True, help="dataset directory from gen-data")
    t.add_argument("--cfg", help="key=value config file (keys: " + ", ".join(config_file.known_keys()) + ")")
    t.add_argument("--out", required=True, help="checkpoint path (a .cfg sidecar is written beside it)")
    t.add_argument("--ablation", choices=sorted(VARIANTS), help="model variant, overrides the config")
    t.add_argument("--seed", type=int, help="seed for init and shuffling, overrides the config")
    t.add_argument("--epochs", type=int, help="epochs, overrides the config")
    t.add_argument("--log", help="CSV log path (default: <out>.csv)")
    t.add_argument("--val", help="optional dataset directory to evaluate after training")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint (mAP50, params, images/s)")
    e.add_argument("--ckpt", required=True, help="checkpoint written by train")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--conf", type=float, default=0.01, help="score floor for detections (default 0.01)")
    e.add_argument("--nms-iou", type=float, default=0.5, help="NMS IoU threshold (default 0.5)")
    e.add_argument("--seed", type=int, default=0, help="unused by evaluation; accepted for uniformity")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--module", default="all", choices=("all",) + gradcheck.MODULES,
                   help="module to check (default all)")
    c.add_argument("--seed", type=int, default=0, help="seed for weights, inputs and directions")
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench-scan", help="time SS2D against quadratic attention")
    b.add_argument("--lengths", default="256,1024,4096,16384", help="comma-separated token counts")
    b.add_argument("--csv", help="write rows to this CSV file")
    b.add_argument("--channels", type=int, default=16, help="feature channels (default 16)")
    b.add_argument("--state-dim", type=int, default=8, help="SSM state size (default 8)")
    b.add_argument("--repeats", type=int, default=3, help="timing repeats, best kept (default 3)")
    b.add_argument("--no-attention", action="store_true", help="skip the quadratic reference")
    b.add_argument("--seed", type=int, default=0, help="seed for weights and inputs")
    b.set_defaults(func=cmd_bench_scan)

    v = sub.add_parser("viz", help="write heatmaps for one image")
    v.add_argument("--ckpt", required=True, help="checkpoint written by train")
    v.add_argument("--image", required=True, help="scene directory, or rgb.ppm with ir.ppm beside it")
    v.add_argument("--out", required=True, help="output directory")
    v.add_argument("--seed", type=int, default=0, help="unused by viz; accepted for uniformity")
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
