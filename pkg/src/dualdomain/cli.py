"""Command-line front end.

Subcommands: codec, train-dicts, train, restore, eval, bench, complexity.
Every run that produces artifacts also writes a flat key=value manifest
recording the resolved configuration, so results can be reproduced
bit-identically by re-running the same command.

Exit codes: 0 success, 1 validation/usage error, 2 I/O or format error.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, backend
from .checkpoint import load_model, save_model
from .errors import CheckpointError, PgmError, ValidationError
from .jpegcodec import BLOCK_DIM
from .metrics import (
    ConvSpec,
    EvalReport,
    EvalRow,
    conv_complexity,
    count_multiplies,
    d3_complexity,
    psnr,
    psnr_b,
    ssim,
)
from .network import (
    DATA_SCALE,
    DualDomainModel,
    TrainConfig,
    init_from_sparse,
    train,
    write_history_csv,
)
from .patches import build_training_set, degrade_image, quantized_grid_from_image
from .pgm import load_gray, save_gray
from .restore import baseline_restore, dictionaries_from_model, restore_image
from .sparse import DualDomainConfig, learn_dictionary
from .jpegcodec import DCT


class CliUsageError(Exception):
    """Raised instead of argparse's SystemExit so we control the exit code."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(f"{self.format_usage()}error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="dualdomain", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("codec", help="JPEG-degrade a directory of graymaps")
    p.add_argument("--quality", type=int, required=True)
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", dest="outdir", required=True)

    p = sub.add_parser("train-dicts", help="learn sparse dictionaries, save an init model")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--quality", type=int, required=True)
    p.add_argument("--atoms", type=int, default=128)
    p.add_argument("--sparsity", type=float, default=0.08)
    p.add_argument("--rounds", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=6000)
    p.add_argument("--ista-iters", type=int, default=40)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model (comma list of qualities = transfer chain)")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--quality", required=True, help="Q, or descending list Q1,Q2,... for easy-hard transfer")
    p.add_argument("--p-phi", type=int, default=128)
    p.add_argument("--p-psi", type=int, default=128)
    p.add_argument("--init", default="sparse", help="sparse | random | checkpoint:PATH")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", choices=("d3", "dbase"), default="d3")
    p.add_argument("--pairs", type=int, default=30000)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dict-sparsity", type=float, default=0.08)
    p.add_argument("--dict-rounds", type=int, default=8)
    p.add_argument("--out", required=True, help="checkpoint path (directory for a chain)")

    p = sub.add_parser("restore", help="restore degraded graymaps with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inpath", required=True)
    p.add_argument("--out", dest="outpath", required=True)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--project", choices=("on", "off"), default="off",
                   help="clamp stage-1 DCT reconstructions into matched intervals")
    p.add_argument("--quality", type=int, default=None,
                   help="declared input quality (defaults to the model's)")

    p = sub.add_parser("eval", help="metric report comparing two directories")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metrics", default="psnr,ssim,psnrb")
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--markdown", default=None, help="also write a markdown table")

    p = sub.add_parser("bench", help="timing and multiply counts vs the iterative baseline")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--baseline-iters", type=int, default=100,
                   help="total inner shrinkage iterations per block")
    p.add_argument("--out", default=None, help="optional CSV output")

    p = sub.add_parser("complexity", help="closed-form multiply/parameter counts")
    p.add_argument("--d3", default=None, metavar="P1,P2,M")
    p.add_argument("--conv", default=None, metavar="CHANNELS:SIZES[:MAPS]")

    return parser


def _write_manifest(path: Path, command: str, args: dict, inputs, outputs, started, finished):
    lines = {
        "command": command,
        "version": __version__,
        "backend": backend.BACKEND,
        "started": started,
        "finished": finished,
        "inputs": ";".join(str(p) for p in inputs),
        "outputs": ";".join(str(p) for p in outputs),
    }
    for key, value in args.items():
        lines[f"arg.{key}"] = str(value)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for key in sorted(lines):
            fh.write(f"{key}={lines[key]}\n")


def _manifest_for(out: Path) -> Path:
    if out.suffix:
        return out.with_name(out.name + ".manifest")
    return out / "run.manifest"


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _list_pgms(directory: Path):
    if not directory.is_dir():
        raise ValidationError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise ValidationError(f"no .pgm files in {directory}")
    return files


def _load_corpus(directory):
    return [load_gray(p) for p in _list_pgms(Path(directory))]


def _cmd_codec(args) -> int:
    started = _utc_now()
    indir, outdir = Path(args.indir), Path(args.outdir)
    files = _list_pgms(indir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for src in files:
        img = load_gray(src)
        degraded, _ = degrade_image(img, args.quality)
        dst = outdir / src.name
        save_gray(degraded, dst)
        outputs.append(dst)
    _write_manifest(
        outdir / "run.manifest", "codec", vars(args), files, outputs, started, _utc_now()
    )
    print(f"degraded {len(files)} image(s) at quality {args.quality} -> {outdir}")
    return 0


def _cmd_train_dicts(args) -> int:
    started = _utc_now()
    images = _load_corpus(args.train_dir)
    pairs = build_training_set(images, args.quality, args.pairs, args.seed)
    from .patches import pairs_as_arrays

    degraded, clean, _, _ = pairs_as_arrays(pairs)
    coeffs = (degraded / DATA_SCALE) @ DCT.forward.T
    phi = learn_dictionary(coeffs, args.atoms, args.sparsity, args.rounds,
                           args.seed, ista_iters=args.ista_iters)
    psi = learn_dictionary(clean / DATA_SCALE, args.atoms, args.sparsity, args.rounds,
                           args.seed + 1, ista_iters=args.ista_iters)
    model = init_from_sparse(phi, psi, meta={"quality": args.quality, "seed": args.seed})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    _write_manifest(_manifest_for(out), "train-dicts", vars(args),
                    [args.train_dir], [out], started, _utc_now())
    print(f"wrote sparse-initialized model ({args.atoms} atoms/stage) -> {out}")
    return 0


def transfer_chain(images, qualities, cfg: TrainConfig, pairs_count: int,
                   p1: int, p2: int, out_dir: Path):
    """Train one model per quality, each warm-started from the previous.

    Qualities must be strictly decreasing (train the lightest compression
    first).  Returns [(quality, checkpoint path, history)].
    """
    if any(b >= a for a, b in zip(qualities, qualities[1:])):
        raise ValidationError(f"qualities must be strictly decreasing, got {qualities}")
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    prev_path = None
    for quality in qualities:
        stage_cfg = cfg if prev_path is None else replace(cfg, init_mode=f"checkpoint:{prev_path}")
        pairs = build_training_set(images, quality, pairs_count, cfg.seed)
        model, history = train(pairs, stage_cfg, p1, p2)
        path = out_dir / f"model_q{quality}.d3ck"
        save_model(model, path)
        write_history_csv(history, out_dir / f"history_q{quality}.csv")
        results.append((quality, path, history))
        prev_path = path
    return results


def _cmd_train(args) -> int:
    started = _utc_now()
    qualities = [int(tok) for tok in str(args.quality).split(",") if tok]
    images = _load_corpus(args.train_dir)
    cfg = TrainConfig(
        epochs=args.epochs,
        seed=args.seed,
        learning_rate=args.lr,
        batch_size=args.batch,
        init_mode=args.init,
        val_fraction=args.val_fraction,
        patience=args.patience,
        arch=args.arch,
        dict_sparsity=args.dict_sparsity,
        dict_rounds=args.dict_rounds,
    )
    out = Path(args.out)
    if len(qualities) > 1:
        results = transfer_chain(images, qualities, cfg, args.pairs, args.p_phi, args.p_psi, out)
        outputs = [p for _, p, _ in results]
        _write_manifest(out / "run.manifest", "train", vars(args),
                        [args.train_dir], outputs, started, _utc_now())
        for quality, path, history in results:
            print(f"Q={quality}: {path} (final val PSNR {history[-1]['val_psnr']:.3f} dB)")
        return 0
    pairs = build_training_set(images, qualities[0], args.pairs, args.seed)
    model, history = train(pairs, cfg, args.p_phi, args.p_psi)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    history_path = out.with_name(out.stem + "_history.csv")
    write_history_csv(history, history_path)
    _write_manifest(_manifest_for(out), "train", vars(args),
                    [args.train_dir], [out, history_path], started, _utc_now())
    print(f"trained {args.arch} model -> {out} "
          f"(final val PSNR {history[-1]['val_psnr']:.3f} dB over {len(history)} epochs)")
    return 0


def _restore_one(model, src: Path, dst: Path, quality: int, stride: int, project: bool):
    img = load_gray(src)
    grid = quantized_grid_from_image(img, quality)
    restored = restore_image(model, img, grid, stride=stride, project=project)
    save_gray(restored, dst)


def _cmd_restore(args) -> int:
    started = _utc_now()
    model = load_model(args.model)
    quality = args.quality if args.quality is not None else model.meta.get("quality", 0)
    if not quality:
        raise ValidationError("input quality unknown; pass --quality")
    if args.quality is not None and model.meta.get("quality") not in (None, 0, args.quality):
        print(
            f"warning: model was trained at Q={model.meta['quality']}, input declared Q={args.quality}",
            file=sys.stderr,
        )
    project = args.project == "on"
    inpath, outpath = Path(args.inpath), Path(args.outpath)
    if inpath.is_dir():
        files = _list_pgms(inpath)
        outpath.mkdir(parents=True, exist_ok=True)
        outputs = []
        for src in files:
            dst = outpath / src.name
            _restore_one(model, src, dst, quality, args.stride, project)
            outputs.append(dst)
        _write_manifest(outpath / "run.manifest", "restore", vars(args),
                        [args.model, inpath], outputs, started, _utc_now())
        print(f"restored {len(files)} image(s) -> {outpath}")
    else:
        outpath.parent.mkdir(parents=True, exist_ok=True)
        _restore_one(model, inpath, outpath, quality, args.stride, project)
        _write_manifest(_manifest_for(outpath), "restore", vars(args),
                        [args.model, inpath], [outpath], started, _utc_now())
        print(f"restored {inpath} -> {outpath}")
    return 0


def _cmd_eval(args) -> int:
    started = _utc_now()
    ref_dir, test_dir = Path(args.ref), Path(args.test)
    ref_files = _list_pgms(ref_dir)
    test_files = _list_pgms(test_dir)
    ref_names = {p.name for p in ref_files}
    test_names = {p.name for p in test_files}
    for name in sorted(ref_names ^ test_names):
        side = "test" if name in ref_names else "ref"
        raise ValidationError(f"unmatched file {name!r} (missing from {side} directory)")
    wanted = [tok.strip() for tok in args.metrics.split(",") if tok.strip()]
    known = {"psnr": psnr, "ssim": ssim, "psnrb": psnr_b}
    for tok in wanted:
        if tok not in known:
            raise ValidationError(f"unknown metric {tok!r} (choose from {sorted(known)})")
    report = EvalReport()
    for ref_path in ref_files:
        ref = load_gray(ref_path)
        test = load_gray(test_dir / ref_path.name)
        row = EvalRow(name=ref_path.name)
        if "psnr" in wanted:
            row.psnr = psnr(ref, test)
        if "ssim" in wanted:
            row.ssim = ssim(ref, test)
        if "psnrb" in wanted:
            row.psnr_b = psnr_b(ref, test)
        report.add(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    outputs = [out]
    if args.markdown:
        md = Path(args.markdown)
        md.write_text(report.to_markdown() + "\n")
        outputs.append(md)
    _write_manifest(_manifest_for(out), "eval", vars(args),
                    [ref_dir, test_dir], outputs, started, _utc_now())
    avg = report.averages()
    parts = [f"{k}={avg[k]:.4f}" for k in ("psnr", "ssim", "psnr_b") if avg[k] is not None]
    print(f"evaluated {len(report.rows)} pair(s): " + ", ".join(parts))
    return 0


def _median(values):
    values = sorted(values)
    mid = len(values) // 2
    if len(values) % 2:
        return values[mid]
    return 0.5 * (values[mid - 1] + values[mid])


def _cmd_bench(args) -> int:
    from .patches import extract_patches, match_intervals_batch, _pad_to_blocks

    started = _utc_now()
    model = load_model(args.model)
    if model.kind != "d3":
        raise ValidationError("bench expects a d3 model")
    quality = model.meta.get("quality", 0)
    if not quality:
        raise ValidationError("model checkpoint lacks a quality; re-save with meta")
    img = load_gray(args.image)
    grid = quantized_grid_from_image(img, quality)
    padded = _pad_to_blocks(img)
    patches = extract_patches(padded, args.stride)
    lower, upper = match_intervals_batch(padded, grid, patches.origins)

    rows = []

    def timed(fn, label):
        times = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            fn()
            times.append((time.perf_counter() - t0) * 1000.0)
        med = _median(times)
        rows.append((label, med))
        return med

    for name in backend.available_backends():
        kern = backend.kernels(name)
        x = patches.patches / DATA_SCALE
        lo, hi = lower / DATA_SCALE, upper / DATA_SCALE
        timed(
            lambda: kern.forward_batch(
                model.stage1.analysis, model.stage1.synthesis, model.stage1.theta,
                model.stage2.analysis, model.stage2.synthesis, model.stage2.theta,
                model.transform.forward, model.transform.inverse, x, lo, hi,
            ),
            f"network-only[{name}]",
        )
    e2e = timed(lambda: restore_image(model, img, grid, stride=args.stride), "end-to-end")

    outer = max(1, args.baseline_iters // (2 * 5))
    cfg = DualDomainConfig(max_iters=outer, inner_steps=5, tol=0.0)
    phi, psi = dictionaries_from_model(model)
    base = timed(
        lambda: baseline_restore(img, grid, phi, psi, cfg, scale=DATA_SCALE),
        f"baseline[{outer * 10} iters]",
    )

    p1, p2 = model.stage1.size, model.stage2.size
    n_patches = len(patches.origins)
    actual = count_multiplies(model)
    theory, params = d3_complexity(p1, p2, BLOCK_DIM)
    blocks = grid.block_shape[0] * grid.block_shape[1]
    per_iter = 3 * p1 * BLOCK_DIM + 3 * p2 * BLOCK_DIM + 3 * BLOCK_DIM**2
    baseline_mults = blocks * outer * 10 * per_iter

    print(f"image {args.image}: {n_patches} patches, {blocks} blocks, backend={backend.BACKEND}")
    for label, med in rows:
        print(f"  {label:>28}: {med:10.3f} ms (median of {args.repeat})")
    print(f"  speed ratio baseline/end-to-end: {base / e2e:8.1f}x")
    print(f"  multiplies/patch: {actual} actual (matrix DCT), {theory} fast-transform figure")
    print(f"  model parameters: {params}")
    print(f"  baseline multiplies (approx): {baseline_mults}")

    outputs = []
    if args.out:
        import csv

        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "median_ms"])
            for label, med in rows:
                writer.writerow([label, f"{med:.6f}"])
            writer.writerow(["multiplies_per_patch_actual", actual])
            writer.writerow(["multiplies_per_patch_theory", theory])
            writer.writerow(["baseline_multiplies_approx", baseline_mults])
        outputs.append(out)
        _write_manifest(_manifest_for(out), "bench", vars(args),
                        [args.model, args.image], outputs, started, _utc_now())
    return 0


def _cmd_complexity(args) -> int:
    if not args.d3 and not args.conv:
        raise ValidationError("pass --d3 and/or --conv")
    if args.d3:
        try:
            p1, p2, m = (int(tok) for tok in args.d3.split(","))
        except ValueError as exc:
            raise ValidationError(f"--d3 expects P1,P2,M, got {args.d3!r}") from exc
        multiplies, params = d3_complexity(p1, p2, m)
        print(f"d3 {p1},{p2},{m}: multiplies {multiplies:,} params {params:,}")
    if args.conv:
        parts = args.conv.split(":")
        if len(parts) not in (2, 3):
            raise ValidationError("--conv expects CHANNELS:SIZES[:MAPS]")
        try:
            channels = tuple(int(t) for t in parts[0].split(","))
            sizes = tuple(int(t) for t in parts[1].split(","))
            maps = tuple(int(t) for t in parts[2].split(",")) if len(parts) == 3 else None
        except ValueError as exc:
            raise ValidationError(f"bad --conv spec {args.conv!r}") from exc
        multiplies, params = conv_complexity(ConvSpec(channels, sizes, maps))
        print(f"conv {args.conv}: multiplies {multiplies:,} params {params:,}")
    return 0


_HANDLERS = {
    "codec": _cmd_codec,
    "train-dicts": _cmd_train_dicts,
    "train": _cmd_train,
    "restore": _cmd_restore,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "complexity": _cmd_complexity,
}


def dispatch(argv) -> int:
    """Parse and run; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliUsageError(parser.format_usage() + "error: a subcommand is required")
        return _HANDLERS[args.command](args)
    except CliUsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PgmError, CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
