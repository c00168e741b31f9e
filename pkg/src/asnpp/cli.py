"""Command-line entry point wiring the pipeline end to end.

Subcommands: codec, dataset, train-single, train-asn, eval, bdrate,
mask-dump.  Every command takes --seed, records its resolved configuration
in the output directory, and exits nonzero with a diagnostic on error.
Artifact files never embed timestamps, so identical invocations produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataset as D, ensemble as E, models as M, metrics
from .codec import FramePlane, QpConfig, encode_decode, DEFAULT_SPLIT_THRESHOLD
from .frameio import read_pgm, write_pgm, read_partition, write_partition
from .mask import gen_mean_mask, gen_boundary_mask
from .nn import TrainConfig, save_weights, load_weights

DEFAULT_QPS = (22, 27, 32, 37)


def _write_config(out_dir: Path, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    (out_dir / "run_config.json").write_text(
        json.dumps(resolved, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def _find_sequences(frames_dir: Path) -> list[tuple[str, list[Path]]]:
    """Subdirectories of PGMs are sequences; loose PGMs are 1-frame sequences."""
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frame directory {frames_dir} does not exist")
    sequences = []
    for sub in sorted(p for p in frames_dir.iterdir() if p.is_dir()):
        pgms = sorted(sub.glob("*.pgm"))
        if pgms:
            sequences.append((sub.name, pgms))
    for pgm in sorted(frames_dir.glob("*.pgm")):
        sequences.append((pgm.stem, [pgm]))
    if not sequences:
        raise FileNotFoundError(f"no PGM frames found under {frames_dir}")
    return sequences


def _parse_qps(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def _model_config(args: argparse.Namespace) -> M.ModelConfig:
    mask = args.mask.lower()
    return M.ModelConfig(
        depth=args.depth,
        use_mask=mask != "none",
        mask_kind=mask.upper() if mask != "none" else "MM",
        fusion=args.fusion.upper(),
        residual_blocks_per_stream=args.blocks,
    )


def _train_config(args: argparse.Namespace, epochs: int) -> TrainConfig:
    decay = args.lr_decay_epoch
    return TrainConfig(
        batch_size=args.batch_size,
        lr=args.lr,
        lr_decay_epoch=None if decay is None or decay < 0 or decay >= epochs else decay,
        end_epoch=epochs,
        seed=args.seed,
        optimizer=args.optimizer,
    )


# -- commands -------------------------------------------------------------------


def cmd_codec(args) -> int:
    out = Path(args.out)
    _write_config(out, args)
    (out / "decoded").mkdir(exist_ok=True)
    (out / "partitions").mkdir(exist_ok=True)
    rows = ["frame\tpayload_bits\tsignaling_bits\ttotal_bits\tpsnr_db"]
    for seq, paths in _find_sequences(Path(args.input)):
        for i, path in enumerate(paths):
            frame = D.crop_to_multiple(read_pgm(path))
            decoded, partition, rate = encode_decode(
                frame, QpConfig(args.qp), args.threshold
            )
            name = f"{seq}_{i:04d}"
            write_pgm(out / "decoded" / f"{name}.pgm", decoded)
            write_partition(out / "partitions" / f"{name}.txt", partition)
            rows.append(
                f"{name}\t{rate.payload_bits:.3f}\t{rate.signaling_bits}"
                f"\t{rate.total_bits:.3f}\t{metrics.psnr(decoded, frame):.4f}"
            )
    (out / "rate.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"codec: wrote {len(rows) - 1} frames to {out}")
    return 0


def _load_input_frames(args) -> list[tuple[str, list[FramePlane]]]:
    if args.toy:
        frames = D.toy_frames(args.toy, args.toy_size, args.toy_size, seed=args.seed)
        return [(f"toy{i:04d}", [f]) for i, f in enumerate(frames)]
    if not args.frames:
        raise ValueError("either --toy N or --frames DIR is required")
    out = []
    for seq, paths in _find_sequences(Path(args.frames)):
        loaded = [D.crop_to_multiple(read_pgm(p)) for p in paths]
        out.append((seq, loaded))
    return out


def cmd_dataset(args) -> int:
    out = Path(args.out)
    _write_config(out, args)
    qps = _parse_qps(args.qps)
    entries = []
    for seq, frames in _load_input_frames(args):
        if args.frames_per_sequence:
            frames = frames[: args.frames_per_sequence]
        for idx, frame in enumerate(frames):
            frame = D.crop_to_multiple(frame)
            for qp in qps:
                decoded, partition, _ = encode_decode(frame, QpConfig(qp), args.threshold)
                entries += D.extract_patches(
                    frame, decoded, partition, qp, sequence=seq, frame_index=idx
                )
    manifest = D.DatasetManifest(entries=entries, seed=args.seed, qps=tuple(qps))
    manifest = D.split_dataset(manifest, args.val_fraction, args.seed)
    D.save_dataset(out, manifest)
    n_train = len(manifest.subset("train"))
    n_val = len(manifest.subset("val"))
    print(f"dataset: {len(entries)} patches ({n_train} train / {n_val} val) -> {out}")
    return 0


def _dataset_part(dataset_dir: str, qp: int, part: str) -> list:
    manifest = D.load_dataset(dataset_dir)
    pairs = [p for p in manifest.subset(part) if p.qp == qp]
    if not pairs:
        raise ValueError(f"dataset has no {part} patches at qp={qp}")
    return pairs


def cmd_train_single(args) -> int:
    out = Path(args.out)
    _write_config(out, args)
    pairs = _dataset_part(args.dataset, args.qp, "train")
    cfg = _train_config(args, args.epochs)
    if args.resume_from:
        base = M.Model.from_weights(load_weights(args.resume_from))
        model, losses = M.fine_tune_from(base, pairs, cfg)
    else:
        model = M.build_model(_model_config(args), seed=args.seed)
        losses = M.train(model, pairs, cfg)
    save_weights(out / "model.asnm", model.to_weights())
    curve = "\n".join(f"{i}\t{loss:.8e}" for i, loss in enumerate(losses))
    (out / "loss_curve.tsv").write_text("# epoch loss\n" + curve + "\n", encoding="utf-8")
    print(f"train-single: {model.config.label()} trained {len(losses)} epochs -> {out}")
    return 0


def cmd_train_asn(args) -> int:
    out = Path(args.out)
    _write_config(out, args)
    train_pairs = _dataset_part(args.dataset, args.qp, "train")
    val_pairs = _dataset_part(args.dataset, args.qp, "val")
    config = _model_config(args)

    bank = E.pretrain_bank(
        train_pairs, config, args.seed, _train_config(args, args.pretrain_epochs)
    )
    if args.init == "random":
        labels = E.init_random(len(train_pairs), seed=args.seed)
    elif args.init == "psnr":
        labels = E.init_psnr(train_pairs)
    else:
        labels = E.init_cluster(train_pairs, seed=args.seed)

    result = E.iterate_train(
        bank,
        train_pairs,
        val_pairs,
        labels,
        _train_config(args, args.iter_epochs),
        max_iters=args.max_iters,
        stall_eps=args.stall_eps,
        threads=args.threads,
    )
    E.save_bank(out / "bank", result.bank)
    rows = "\n".join(f"{i}\t{g:.6f}" for i, g in enumerate(result.gain_curve))
    (out / "gain_curve.tsv").write_text("# iteration gain_db\n" + rows + "\n", encoding="utf-8")
    print(
        f"train-asn: init={args.init}, {len(result.gain_curve) - 1} iterations, "
        f"final gain {result.gain_curve[-1]:+.4f} dB -> {out}"
    )
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    _write_config(out, args)
    bank = E.load_bank(args.bank) if args.bank else None
    model = None
    if args.model:
        model = M.Model.from_weights(load_weights(args.model))
    if (bank is None) == (model is None):
        raise ValueError("exactly one of --bank or --model is required")

    qps = _parse_qps(args.qps)
    report = ["frame\tqp\tpsnr_decoded\tpsnr_processed\tdelta_db"]
    rd_base, rd_method = [], []
    for qp in qps:
        frame_rows = []
        base_bits = method_bits = 0.0
        base_psnrs, method_psnrs = [], []
        for seq, frames in _find_sequences(Path(args.frames)):
            for idx, path_frame in enumerate(frames):
                original = D.crop_to_multiple(read_pgm(path_frame))
                decoded, partition, rate = encode_decode(
                    original, QpConfig(qp), args.threshold
                )
                if bank is not None:
                    stream, table = E.encode_select_flags(
                        bank, decoded, original, partition, threads=args.threads
                    )
                    flag_dir = out / "flags" / f"qp{qp}"
                    flag_dir.mkdir(parents=True, exist_ok=True)
                    E.save_flags(flag_dir / f"{seq}_{idx:04d}.asnf", stream)
                    processed = E.decode_dispatch(
                        bank, decoded, partition, stream, threads=args.threads
                    )
                    # decoder output must reproduce the encoder-side selection
                    check = E.psnr_table(
                        M.frame_to_patches(processed)[None], M.frame_to_patches(original)
                    )[0]
                    if not np.array_equal(check, table.max(axis=0)):
                        raise AssertionError("decoder output diverged from encoder selection")
                    rate_m = E.with_flag_overhead(rate, stream.patch_count)
                else:
                    processed = M.process_frame(model, decoded, partition)
                    rate_m = rate
                p_base = metrics.psnr(decoded, original)
                p_meth = metrics.psnr(processed, original)
                frame_rows.append(
                    f"{seq}_{idx:04d}\t{qp}\t{p_base:.4f}\t{p_meth:.4f}\t{p_meth - p_base:+.4f}"
                )
                base_bits += rate.total_bits
                method_bits += rate_m.total_bits
                base_psnrs.append(p_base)
                method_psnrs.append(p_meth)
        report += frame_rows
        rd_base.append(f"{qp}\t{base_bits:.3f}\t{np.mean(base_psnrs):.6f}")
        rd_method.append(f"{qp}\t{method_bits:.3f}\t{np.mean(method_psnrs):.6f}")
    (out / "report.tsv").write_text("\n".join(report) + "\n", encoding="utf-8")
    header = "qp\trate_bits\tpsnr_db\n"
    (out / "rd_baseline.tsv").write_text(header + "\n".join(rd_base) + "\n", encoding="utf-8")
    (out / "rd_method.tsv").write_text(header + "\n".join(rd_method) + "\n", encoding="utf-8")
    print(f"eval: wrote report for qps {qps} -> {out}")
    return 0


def _read_rd(path: str) -> metrics.RdCurve:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("qp") or not line.strip():
            continue
        _, rate, psnr_db = line.split("\t")
        rows.append(metrics.RdPoint(float(rate), float(psnr_db)))
    rows.sort(key=lambda p: p.rate_bits)
    return metrics.RdCurve(rows)


def cmd_bdrate(args) -> int:
    value = metrics.bd_rate(_read_rd(args.anchor), _read_rd(args.test))
    print(f"bd-rate: {value:+.4f}%")
    return 0


def cmd_mask_dump(args) -> int:
    out = Path(args.out)
    _write_config(out, args)
    decoded = read_pgm(args.decoded)
    partition = read_partition(args.partition)
    mm = gen_mean_mask(decoded, partition)
    bm = gen_boundary_mask(partition)
    for name, mask in (("mm.pgm", mm), ("bm.pgm", bm)):
        raster = np.clip(np.round(mask.values * 255.0), 0, 255).astype(np.uint8)
        write_pgm(out / name, FramePlane.from_array(raster))
    print(f"mask-dump: wrote mm.pgm and bm.pgm -> {out}")
    return 0


# -- parser ----------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--depth", choices=("shallow", "deep"), default="deep")
    p.add_argument("--mask", choices=("none", "mm", "bm"), default="none")
    p.add_argument("--fusion", choices=("af", "clf", "cef"), default="af")
    p.add_argument("--blocks", type=int, default=4, help="residual blocks per stream")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-decay-epoch", type=int, default=None,
                   help="epoch at which lr drops 10x (default: no decay)")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asnpp",
        description="Toy-codec post-processing pipeline: codec, masks, models, "
        "adaptive switching, and rate-distortion evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"asnpp {__version__}")
    parser.add_argument(
        "--config",
        help="optional key=value file supplying defaults; explicit flags win",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codec", help="encode/decode PGM frames with the toy codec")
    p.add_argument("--input", required=True, help="directory of PGM frames")
    p.add_argument("--out", required=True)
    p.add_argument("--qp", type=int, default=37)
    p.add_argument("--threshold", type=float, default=DEFAULT_SPLIT_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_codec)

    p = sub.add_parser("dataset", help="build a patch dataset from frames or toy content")
    p.add_argument("--frames", help="directory of source PGM frames")
    p.add_argument("--toy", type=int, default=0, help="generate N procedural frames instead")
    p.add_argument("--toy-size", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--qps", default=",".join(map(str, DEFAULT_QPS)))
    p.add_argument("--threshold", type=float, default=DEFAULT_SPLIT_THRESHOLD)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--frames-per-sequence", type=int, default=0, help="0 = all frames")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train-single", help="train one post-processing model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--qp", type=int, default=37)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--resume-from", help="fine-tune from this .asnm instead of scratch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_single)

    p = sub.add_parser("train-asn", help="pre-train and iteratively refine a model bank")
    p.add_argument("--dataset", required=True)
    p.add_argument("--qp", type=int, default=37)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--init", choices=("random", "psnr", "cluster"), default="cluster")
    p.add_argument("--pretrain-epochs", type=int, default=4)
    p.add_argument("--iter-epochs", type=int, default=2)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--stall-eps", type=float, default=0.002)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_asn)

    p = sub.add_parser("eval", help="codec + post-processing evaluation over qps")
    p.add_argument("--frames", required=True, help="directory of original PGM frames")
    p.add_argument("--bank", help="bank directory from train-asn")
    p.add_argument("--model", help="single .asnm model from train-single")
    p.add_argument("--qps", default=",".join(map(str, DEFAULT_QPS)))
    p.add_argument("--threshold", type=float, default=DEFAULT_SPLIT_THRESHOLD)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", help="BD-rate between two 4-point rd .tsv files")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("mask-dump", help="export guidance masks as PGM images")
    p.add_argument("--decoded", required=True, help="decoded frame PGM")
    p.add_argument("--partition", required=True, help="partition .txt from codec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask_dump)
    return parser


def _apply_config_file(argv: list[str]) -> list[str]:
    """Expand ``--config FILE`` into flags; flags given on argv win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = argv[idx + 1]
    rest = argv[:idx] + argv[idx + 2 :]
    extra: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        flag = "--" + key.strip().replace("_", "-")
        if flag not in rest:
            extra += [flag, value.strip()]
    # subcommand stays first; file values precede user flags
    return rest[:1] + extra + rest[1:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_apply_config_file(argv))
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # argparse handles its own errors
        print(f"asnpp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
