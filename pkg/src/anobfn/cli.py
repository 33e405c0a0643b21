"""Command-line pipeline: simulate -> train -> infer -> eval.

Exit codes: 0 success, 1 usage/config errors, 2 runtime failures.  The
ANOBFN_THREADS environment variable caps torch's intra-op thread count,
which also makes runs bit-reproducible across machines with different core
counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import denoiser as dn
from . import metrics as mx
from .formats import (
    ConfigError,
    load_run_config,
    read_abfn,
    serialize_run_config,
    to_u8,
    write_abfn,
    write_json_atomic,
    write_pgm,
)
from .inference import InferenceConfig, reconstruct
from .phantom import write_dataset
from .schedule import ScheduleConfig, build_schedule
from .seeds import derive_seed, generator


class UsageError(ValueError):
    pass


def _load_manifest(data_dir: str) -> dict:
    path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(path):
        raise UsageError(f"no dataset manifest at {path}")
    with open(path) as fh:
        return json.load(fh)


def _require_empty(out_dir: str, force: bool) -> None:
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise UsageError(f"output directory {out_dir} is not empty (use --force)")


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    _require_empty(args.out, args.force)
    manifest = write_dataset(cfg.phantom, args.out)
    write_json_atomic(os.path.join(args.out, "run_config.json"), json.loads(serialize_run_config(cfg)))
    counts = {k: len(v) for k, v in manifest["splits"].items()}
    print(f"wrote {cfg.phantom.n_subjects} subjects to {args.out} (splits: {counts})")
    return 0


def _load_split_images(data_dir: str, manifest: dict, split: str) -> tuple[list[str], np.ndarray]:
    entries = [e for e in manifest["subjects"] if e["split"] == split]
    ids = [e["subject_id"] for e in entries]
    imgs = np.stack(
        [read_abfn(os.path.join(data_dir, e["files"]["healthy"])) for e in entries]
    ).astype(np.float64)
    return ids, imgs


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    manifest = _load_manifest(args.data)
    _, train_imgs = _load_split_images(args.data, manifest, "train")
    size = train_imgs.shape[-1]
    if size % cfg.denoiser.downsample_factor:
        raise UsageError(
            f"image size {size} is not divisible by {cfg.denoiser.downsample_factor}"
        )

    table = build_schedule(cfg.schedule)
    os.makedirs(args.out, exist_ok=True)

    latest = os.path.join(args.out, "latest.json")
    if os.path.exists(latest):
        state, ck_manifest = dn.load_trainer(args.out)
        if ck_manifest["image_size"] != size:
            raise UsageError(
                f"checkpoint was trained on {ck_manifest['image_size']}px images, data is {size}px"
            )
        print(f"resuming from step {state.step}")
    else:
        state = dn.make_trainer(cfg.denoiser, cfg.train)

    n_train = train_imgs.shape[0]
    batch = cfg.train.batch_size
    steps_per_epoch = (n_train + batch - 1) // batch
    total_steps = cfg.train.epochs * steps_per_epoch
    ckpt_every = max(1, cfg.train.epochs // 4) * steps_per_epoch

    log_path = os.path.join(args.out, "train_log.csv")
    new_log = not os.path.exists(log_path)
    with open(log_path, "a", newline="") as log_fh:
        log = csv.writer(log_fh)
        if new_log:
            log.writerow(["step", "loss", "grad_norm"])
        while state.step < total_steps:
            epoch = state.step // steps_per_epoch
            order = generator(state.seed, 1, epoch).permutation(n_train)
            start = (state.step % steps_per_epoch) * batch
            for lo in range(start, n_train, batch):
                chunk = train_imgs[order[lo : lo + batch]]
                loss, grad_norm = dn.train_step(chunk, table, cfg.noise, state)
                log.writerow([state.step, f"{loss:.6f}", f"{grad_norm:.6f}"])
                if state.step % ckpt_every == 0 or state.step >= total_steps:
                    dn.save_checkpoint(args.out, state, cfg.schedule, cfg.noise, size)
                if state.step >= total_steps:
                    break

    dn.save_checkpoint(args.out, state, cfg.schedule, cfg.noise, size)
    print(f"trained to step {state.step}; checkpoints in {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    inf_cfg = cfg.inference
    if args.mode is not None:
        inf_cfg = InferenceConfig(
            mode=args.mode,
            n_steps=inf_cfg.n_steps,
            receiver_noise=inf_cfg.receiver_noise,
            k=inf_cfg.k,
            t_c=inf_cfg.t_c,
            seed=inf_cfg.seed,
        )
    manifest = _load_manifest(args.data)
    model, ck_manifest = dn.load_model(args.checkpoint, use_ema=True)
    sched_cfg = ScheduleConfig(**{**ck_manifest["schedule"], "n_steps": inf_cfg.n_steps})
    table = build_schedule(
        sched_cfg, variant="unconditional" if inf_cfg.mode == "bfn_vanilla" else "conditioned"
    )
    from .noise import NoiseConfig

    noise_cfg = NoiseConfig(**ck_manifest["noise"])

    _require_empty(args.out, args.force)
    jobs = []
    for entry in manifest["subjects"]:
        if entry["split"] != "test":
            continue
        jobs.append(("test_cn", entry, entry["files"]["healthy"]))
        jobs.append(("test_sad", entry, entry["files"]["abnormal"]))
    if not jobs:
        raise UsageError("dataset has no test subjects")

    for split, entry, rel in jobs:
        x0 = read_abfn(os.path.join(args.data, rel)).astype(np.float64)
        per_image = InferenceConfig(
            mode=inf_cfg.mode,
            n_steps=inf_cfg.n_steps,
            receiver_noise=inf_cfg.receiver_noise,
            k=inf_cfg.k,
            t_c=inf_cfg.t_c,
            seed=derive_seed(inf_cfg.seed, f"{split}:{entry['subject_id']}:{entry['slice_id']}"),
        )
        result = reconstruct(x0, model, table, per_image, noise_cfg)
        out_dir = os.path.join(args.out, split)
        os.makedirs(out_dir, exist_ok=True)
        stem = f"{entry['subject_id']}_{entry['slice_id']:02d}"
        write_abfn(os.path.join(out_dir, f"{stem}_pseudo.abfn"), result.pseudo_healthy)
        write_abfn(os.path.join(out_dir, f"{stem}_amap.abfn"), result.anomaly_map)
        preview = np.concatenate(
            [to_u8(x0), to_u8(result.pseudo_healthy), to_u8(result.anomaly_map, -0.5, 0.5)],
            axis=1,
        )
        write_pgm(os.path.join(out_dir, f"{stem}_preview.pgm"), preview)
    print(f"reconstructed {len(jobs)} images ({inf_cfg.mode}) into {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    manifest = _load_manifest(args.data)
    test_entries = [e for e in manifest["subjects"] if e["split"] == "test"]
    if not test_entries:
        raise UsageError("dataset has no test subjects")

    missing = []
    for split in ("test_cn", "test_sad"):
        for entry in test_entries:
            stem = f"{entry['subject_id']}_{entry['slice_id']:02d}"
            for suffix in ("pseudo", "amap"):
                p = os.path.join(args.pred, split, f"{stem}_{suffix}.abfn")
                if not os.path.exists(p):
                    missing.append(f"{split}/{stem}_{suffix}")
    if missing:
        raise RuntimeError("missing predictions: " + ", ".join(sorted(missing)))

    os.makedirs(args.out, exist_ok=True)
    dr = cfg.metrics.data_range
    reports = {"test_cn": mx.MetricsReport(), "test_sad": mx.MetricsReport()}
    for entry in test_entries:
        stem = f"{entry['subject_id']}_{entry['slice_id']:02d}"
        healthy = read_abfn(os.path.join(args.data, entry["files"]["healthy"])).astype(np.float64)
        mask = read_abfn(os.path.join(args.data, entry["files"]["mask"])) > 0.5

        pseudo_cn = read_abfn(os.path.join(args.pred, "test_cn", f"{stem}_pseudo.abfn"))
        reports["test_cn"].records.append(
            mx.ImageRecord(
                subject_id=entry["subject_id"],
                slice_id=entry["slice_id"],
                mse=mx.mse(pseudo_cn, healthy),
                psnr=mx.psnr(pseudo_cn, healthy, dr),
                ssim=mx.ssim(pseudo_cn, healthy, dr),
            )
        )

        pseudo_sad = read_abfn(os.path.join(args.pred, "test_sad", f"{stem}_pseudo.abfn"))
        amap = read_abfn(os.path.join(args.pred, "test_sad", f"{stem}_amap.abfn")).astype(np.float64)
        reports["test_sad"].records.append(
            mx.ImageRecord(
                subject_id=entry["subject_id"],
                slice_id=entry["slice_id"],
                mse=mx.mse(pseudo_sad, healthy),
                psnr=mx.psnr(pseudo_sad, healthy, dr),
                ssim=mx.ssim(pseudo_sad, healthy, dr),
                iou=mx.iou_at_threshold(amap, mask, cfg.metrics.iou_threshold),
                ap=mx.average_precision(amap, mask),
            )
        )

    aggregate = {}
    for split, report in reports.items():
        mx.write_metrics_csv(os.path.join(args.out, f"metrics_{split}.csv"), report)
        aggregate[split] = report.aggregate()
    write_json_atomic(os.path.join(args.out, "aggregate.json"), aggregate)
    line = ", ".join(
        f"{split} " + " ".join(f"{k}={v['mean']:.4f}" for k, v in agg.items())
        for split, agg in aggregate.items()
    )
    print(f"eval: {line}")
    return 0


# --------------------------------------------------------------------------
# argument plumbing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anobfn",
        description="Pseudo-healthy reconstruction and anomaly scoring on synthetic phantoms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, out=True, checkpoint=False, mode=False, pred=False):
        p.add_argument("--config", default=None, help="JSON run config (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint directory")
        if mode:
            p.add_argument("--mode", default=None, help="inference mode override")
        if pred:
            p.add_argument("--pred", required=True, help="directory written by 'infer'")
        p.add_argument("--force", action="store_true", help="allow writing into non-empty dirs")

    common(sub.add_parser("simulate", help="generate a phantom dataset"))
    common(sub.add_parser("train", help="train the denoiser"), data=True)
    common(sub.add_parser("infer", help="reconstruct test images"), data=True, checkpoint=True, mode=True)
    common(sub.add_parser("eval", help="score predictions"), data=True, pred=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("ANOBFN_THREADS")
    if threads:
        try:
            import torch

            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"error: ANOBFN_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return 1

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; report those as config errors (1)
        return 0 if exc.code in (0, None) else 1

    handlers = {
        "simulate": cmd_simulate,
        "train": cmd_train,
        "infer": cmd_infer,
        "eval": cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except dn.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001  -- CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
