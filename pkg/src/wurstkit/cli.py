"""Operator command line: train, sample, merge, evaluate, benchmark.

Progress goes to standard error; machine artifacts (paths and JSON
values) go to standard output. Exit codes: 0 success, 1 failed
precondition or runtime error (single ``error: ...`` line), 2 usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import re
import sys

import numpy as np

from . import backend
from .config import RunConfig, load_run_config, model_configs, train_config
from .evalkit import (
    extract_stats,
    fid,
    fid_audit,
    get_extractor,
    inception_score,
    kernel_bench,
    latency_bench,
    write_audit_report,
    write_kernel_report,
    write_latency_report,
)
from .pipeline import Pipeline, SamplerConfig, compression_report
from .training import (
    PreconditionError,
    TrainingDiverged,
    interpolate_weights,
    load_checkpoint,
    run_training,
    save_checkpoint,
    synth_dataset,
)
from .training.data import load_png, save_png

_STAGE_NAMES = {"stage-a": "a", "stage-b": "b", "stage-c": "c", "baseline": "baseline"}


class _Parser(argparse.ArgumentParser):
    """Argument parser with single-line usage errors."""

    def error(self, message):
        self.exit(2, f"usage error: {message}\n")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _slug(text: str, limit: int = 40) -> str:
    out = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return out[:limit] or "sample"


def _load_image_dir(path: str) -> np.ndarray:
    files = sorted(glob.glob(os.path.join(path, "*.png")))
    if not files:
        raise ValueError(f"no .png files under {path}")
    return np.stack([load_png(f) for f in files])


def _sampler(cfg: RunConfig, args) -> SamplerConfig:
    overrides = {
        "tau_c": getattr(args, "steps_c", None),
        "tau_b": getattr(args, "steps_b", None),
        "guidance_c": getattr(args, "guidance_c", None),
        "guidance_b": getattr(args, "guidance_b", None),
        "seed": getattr(args, "seed", None),
    }
    return dataclasses.replace(cfg.sampler, **{k: v for k, v in overrides.items() if v is not None})


def _extractor(cfg: RunConfig):
    return get_extractor(cfg.eval.extractor, cfg.shapes, cfg.eval.extractor_data_seed)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    stage = _STAGE_NAMES[args.stage]
    tc = train_config(
        cfg, stage, steps=args.steps, batch_size=args.batch_size, seed=args.seed
    )
    _progress(f"training {args.stage} for {tc.steps} steps in {args.workdir}")
    result = run_training(stage, tc, args.workdir, model_configs(cfg))
    _progress(f"finished at step {result.checkpoint.step}")
    print(result.path)
    return 0


def _cmd_sample(args) -> int:
    cfg = load_run_config(args.config)
    sampler = _sampler(cfg, args)
    if args.baseline:
        pipe = Pipeline.baseline_from_workdir(args.workdir)
    else:
        pipe = Pipeline.from_workdir(args.workdir)
    _progress(f"sampling '{args.prompt}' seed={sampler.seed}")
    result = pipe.generate(args.prompt, sampler)
    out_dir = args.out or os.path.join(args.workdir, "samples")
    stem = f"{_slug(args.prompt)}_s{sampler.seed}"
    png_path, rec_path = result.write(out_dir, stem)
    print(png_path)
    print(rec_path)
    return 0


def _cmd_merge(args) -> int:
    merged = interpolate_weights(
        load_checkpoint(args.a), load_checkpoint(args.b), args.lam
    )
    save_checkpoint(args.out, merged)
    print(args.out)
    return 0


def _cmd_probe_decode(args) -> int:
    cfg = load_run_config(args.config)
    pipe = Pipeline.from_workdir(args.workdir)
    if args.latent is not None:
        latent = np.load(args.latent).astype(np.float32)
        stem = f"probe_{_slug(os.path.basename(args.latent))}"
    else:
        sampler = _sampler(cfg, args)
        _progress(f"sampling prior for '{args.prompt}' seed={sampler.seed}")
        latent = pipe.sample_stage_c(args.prompt, sampler)
        stem = f"probe_{_slug(args.prompt)}_s{sampler.seed}"
    image = pipe.probe_decode(latent)
    out_dir = args.out or os.path.join(args.workdir, "samples")
    os.makedirs(out_dir, exist_ok=True)
    png_path = os.path.join(out_dir, f"{stem}.png")
    save_png(png_path, image)
    print(png_path)
    return 0


def _cmd_eval_fid(args) -> int:
    cfg = load_run_config(args.config)
    fx = _extractor(cfg)
    stats_a = extract_stats(_load_image_dir(args.set_a), fx)
    stats_b = extract_stats(_load_image_dir(args.set_b), fx)
    print(json.dumps({"fid": fid(stats_a, stats_b)}))
    return 0


def _cmd_eval_fid_audit(args) -> int:
    cfg = load_run_config(args.config)
    images = _load_image_dir(args.corpus)
    _progress(f"auditing {len(images)} images")
    rows = fid_audit(images, _extractor(cfg))
    out_dir = args.out or os.path.join(args.workdir, "eval")
    csv_path, json_path = write_audit_report(rows, out_dir)
    print(csv_path)
    print(json_path)
    return 0


def _cmd_eval_is(args) -> int:
    cfg = load_run_config(args.config)
    fx = _extractor(cfg)
    probs = fx.class_probs(_load_image_dir(args.set))
    print(json.dumps({"inception_score": inception_score(probs)}))
    return 0


def _cmd_bench_latency(args) -> int:
    cfg = load_run_config(args.config)
    pipe = Pipeline.from_workdir(args.workdir)
    batches = tuple(int(b) for b in args.batch_sizes.split(","))
    rows = latency_bench(pipe, _sampler(cfg, args), batch_sizes=batches)
    out_dir = args.out or os.path.join(args.workdir, "bench")
    csv_path, json_path = write_latency_report(rows, out_dir)
    print(csv_path)
    print(json_path)
    return 0


def _cmd_bench_kernels(args) -> int:
    rows = kernel_bench(repeats=args.repeats)
    out_dir = args.out or os.path.join(args.workdir, "bench")
    csv_path, json_path = write_kernel_report(rows, out_dir)
    print(csv_path)
    print(json_path)
    return 0


def _cmd_dataset_synth(args) -> int:
    cfg = load_run_config(args.config)
    if args.spec is None:
        spec = cfg.shapes
    else:
        from .training.loops import dataclass_from_dict
        from .training import SynthSpec

        raw = args.spec
        doc = json.loads(raw if raw.lstrip().startswith("{") else open(raw).read())
        spec = dataclass_from_dict(SynthSpec, doc)
    seed = args.seed if args.seed is not None else cfg.train.data_seed
    _progress(f"rendering {spec.count} images at {spec.image_size}px, seed {seed}")
    manifest = synth_dataset(spec, seed, args.out)
    print(manifest)
    return 0


def _cmd_inspect(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    man = ck.manifest
    print(f"stage: {man.get('stage', '?')}")
    print(f"step: {man.get('step', '?')}")
    data = man.get("data", {})
    if data:
        print(f"data: {data.get('count', '?')} images at {data.get('image_size', '?')}px")
    for key in ("latent_scale", "sc_scale"):
        if key in man:
            print(f"{key}: {man[key]}")
    groups: dict[str, tuple[int, int]] = {}
    for name, tensor in ck.tensors.items():
        group = name.split(".", 1)[0]
        n, p = groups.get(group, (0, 0))
        groups[group] = (n + 1, p + tensor.size)
    for group in sorted(groups):
        n, p = groups[group]
        print(f"params[{group}]: {p} in {n} tensors")
    image_size = data.get("image_size")
    comp_cfg = man.get("model_configs", {}).get("compressor")
    if image_size and comp_cfg:
        table = compression_report(image_size, image_size // 4, comp_cfg["input_size"] // 32)
        for row_name in ("stage_a", "semantic", "total"):
            row = table[row_name]
            print(f"compression[{row_name}]: {row['from']}px -> {row['to']}px = {row['label']}")
    if args.shapes:
        for name in sorted(ck.tensors):
            print(f"tensor: {name} {tuple(ck.tensors[name].shape)}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="run config JSON path; built-in defaults when omitted")
    common.add_argument("--workdir", default="runs/desk", help="checkpoint and artifact directory")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--threads", type=int, default=None, help="worker thread cap; all cores when omitted")

    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="wurstkit", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train one stage")
    p.add_argument("stage", choices=sorted(_STAGE_NAMES), help="which stage to train")
    p.add_argument("--steps", type=int, default=None, help="override the configured step budget")
    p.add_argument("--batch-size", type=int, default=None, help="override the configured batch size")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("sample", parents=[common], formatter_class=fmt, help="generate an image")
    p.add_argument("--prompt", required=True, help="caption to condition on")
    p.add_argument("--steps-c", type=int, default=None, help="prior sampling steps")
    p.add_argument("--steps-b", type=int, default=None, help="refiner sampling steps")
    p.add_argument("--guidance-c", type=float, default=None, help="prior guidance scale")
    p.add_argument("--guidance-b", type=float, default=None, help="refiner guidance scale")
    p.add_argument("--baseline", action="store_true", help="use the text-only baseline bundle")
    p.add_argument("--out", default=None, help="output directory; WORKDIR/samples when omitted")
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("merge", parents=[common], formatter_class=fmt, help="interpolate two checkpoints")
    p.add_argument("--a", required=True, help="first checkpoint path")
    p.add_argument("--b", required=True, help="second checkpoint path")
    p.add_argument("--lambda", dest="lam", type=float, required=True, help="weight on the second checkpoint")
    p.add_argument("--out", required=True, help="merged checkpoint path")
    p.set_defaults(fn=_cmd_merge)

    p = sub.add_parser("probe-decode", parents=[common], formatter_class=fmt, help="image a prior latent directly")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--latent", default=None, help=".npy file holding a semantic latent")
    src.add_argument("--prompt", default=None, help="sample a latent from the prior first")
    p.add_argument("--steps-c", type=int, default=None, help="prior sampling steps")
    p.add_argument("--guidance-c", type=float, default=None, help="prior guidance scale")
    p.add_argument("--out", default=None, help="output directory; WORKDIR/samples when omitted")
    p.set_defaults(fn=_cmd_probe_decode)

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt, help="distance metrics and audits")
    esub = p.add_subparsers(dest="eval_command", required=True, metavar="metric")
    e = esub.add_parser("fid", parents=[common], formatter_class=fmt, help="distance between two image sets")
    e.add_argument("--set-a", required=True, help="directory of .png images")
    e.add_argument("--set-b", required=True, help="directory of .png images")
    e.set_defaults(fn=_cmd_eval_fid)
    e = esub.add_parser("fid-audit", parents=[common], formatter_class=fmt, help="manipulation robustness table")
    e.add_argument("--corpus", required=True, help="directory of .png images")
    e.add_argument("--out", default=None, help="report directory; WORKDIR/eval when omitted")
    e.set_defaults(fn=_cmd_eval_fid_audit)
    e = esub.add_parser("is", parents=[common], formatter_class=fmt, help="label-entropy score of an image set")
    e.add_argument("--set", required=True, help="directory of .png images")
    e.set_defaults(fn=_cmd_eval_is)

    p = sub.add_parser("bench", parents=[common], formatter_class=fmt, help="latency and kernel benchmarks")
    bsub = p.add_subparsers(dest="bench_command", required=True, metavar="target")
    b = bsub.add_parser("latency", parents=[common], formatter_class=fmt, help="generation wall time and pass counts")
    b.add_argument("--batch-sizes", default="1,4", help="comma-separated batch sizes")
    b.add_argument("--steps-c", type=int, default=None, help="prior sampling steps")
    b.add_argument("--steps-b", type=int, default=None, help="refiner sampling steps")
    b.add_argument("--out", default=None, help="report directory; WORKDIR/bench when omitted")
    b.set_defaults(fn=_cmd_bench_latency)
    b = bsub.add_parser("kernels", parents=[common], formatter_class=fmt, help="jitted vs pure-numpy kernels")
    b.add_argument("--repeats", type=int, default=5, help="timing repeats per kernel")
    b.add_argument("--out", default=None, help="report directory; WORKDIR/bench when omitted")
    b.set_defaults(fn=_cmd_bench_kernels)

    p = sub.add_parser("dataset", parents=[common], formatter_class=fmt, help="dataset tooling")
    dsub = p.add_subparsers(dest="dataset_command", required=True, metavar="action")
    d = dsub.add_parser("synth", parents=[common], formatter_class=fmt, help="render the synthetic corpus to disk")
    d.add_argument("--spec", default=None, help="dataset spec as inline JSON or a JSON file path")
    d.add_argument("--out", required=True, help="output directory")
    d.set_defaults(fn=_cmd_dataset_synth)

    p = sub.add_parser("inspect", parents=[common], formatter_class=fmt, help="describe a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint path")
    p.add_argument("--shapes", action="store_true", help="also list every tensor shape")
    p.set_defaults(fn=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        backend.set_num_threads(args.threads)
    try:
        return args.fn(args)
    except (PreconditionError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
