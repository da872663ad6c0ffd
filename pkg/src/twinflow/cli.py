"""Command-line entry point: train, sample, gradcheck, filter, eval-separation.

Outputs are files plus structured stdout; no interactive mode. Exit codes:
0 success, 1 usage/config error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import save_container
from .config import RunConfig
from .datapipe import FilterThresholds, read_manifest_lines, rejection_reason
from .errors import ConfigError, TwinflowError
from .flowmatch import GuidanceConfig, SamplerSchedule
from .gradcheck import run_gradcheck, tiny_gradcheck_config
from .objectives import LOSS_LOG_HEADER, format_loss_line
from .reflora import SyntheticEmbeddingProvider
from .sampling import evaluate_separation, generate
from .trainer import build_model, checkpoint_load, checkpoint_save, cluster_mean, train_loop

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _resolve_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["train_steps"] = args.steps
    return config.with_overrides(**overrides)


def cmd_train(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = config.to_json()
    print(resolved)
    (out / "run_config.json").write_text(resolved + "\n")

    model = build_model(config)
    with open(out / "loss_log.tsv", "w") as log:
        log.write(LOSS_LOG_HEADER + "\n")
        history = train_loop(model, config, log=log)
    checkpoint_path = out / "checkpoint.bin"
    checkpoint_save(model, None, checkpoint_path,
                    extra={"train_steps": config.train_steps})
    final = history[-1]
    print(f"final\t{format_loss_line(len(history), final)}")
    print(f"checkpoint written to {checkpoint_path}")
    return EXIT_OK


def cmd_sample(args) -> int:
    model, _, _ = checkpoint_load(args.checkpoint)
    config = model.config
    seed = args.seed if args.seed is not None else config.seed
    steps = args.steps if args.steps is not None else config.sample_steps
    guidance = GuidanceConfig(
        scale_video=args.guidance_video if args.guidance_video is not None else config.guidance_video,
        scale_audio=args.guidance_audio if args.guidance_audio is not None else config.guidance_audio,
    )
    provider = SyntheticEmbeddingProvider(config.seed)
    ref_rng = np.random.default_rng(np.random.SeedSequence([seed, 3, args.identity, args.timbre]))
    mu_v = cluster_mean("video", args.identity, config.d_in, config.sigma_between, config.seed)
    mu_a = cluster_mean("audio", args.timbre, config.d_in, config.sigma_between, config.seed)
    video_refs = mu_v + config.sigma_within * ref_rng.normal(
        0.0, 1.0, (config.seq_ref_video, config.d_in))
    audio_refs = mu_a + config.sigma_within * ref_rng.normal(
        0.0, 1.0, (config.seq_ref_audio, config.d_in))

    result = generate(
        model, video_refs, audio_refs,
        provider.face(args.identity), provider.timbre(args.timbre),
        text_id=args.text_id,
        guidance=guidance,
        schedule=SamplerSchedule.uniform(steps),
        rng=np.random.default_rng(np.random.SeedSequence([seed, 5])),
        conditional=not args.unconditional,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    latents_path = out / "latents.bin"
    meta = dict(result.meta, seed=seed, identity=args.identity, timbre=args.timbre)
    save_container(latents_path, config,
                   {"video_latents": result.video, "audio_latents": result.audio},
                   extra=meta)
    print(json.dumps({"latents": str(latents_path), **meta}, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = RunConfig.from_file(args.config) if args.config else tiny_gradcheck_config()
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    report = run_gradcheck(config, tolerance=args.tolerance,
                           max_entries=args.max_entries)
    payload = report.to_dict()
    del payload["per_param"]
    print(json.dumps(payload, sort_keys=True))
    if not report.passed:
        print(f"FAIL: worst parameter {report.worst_param} "
              f"rel err {report.max_rel_err:.3e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_filter(args) -> int:
    thresholds = FilterThresholds(
        max_abs_offset_frames=args.max_offset,
        min_confidence=args.min_confidence,
        min_aesthetic=args.min_aesthetic,
        min_duration_s=args.min_duration,
    )
    if args.manifest == "-":
        lines = sys.stdin
    else:
        path = Path(args.manifest)
        if not path.exists():
            raise ConfigError(f"manifest not found: {path}")
        lines = path.read_text().splitlines()

    n_malformed = 0
    rejects = []
    for lineno, record, err in read_manifest_lines(lines):
        if err is not None:
            n_malformed += 1
            print(f"warning: line {lineno}: {err}", file=sys.stderr)
            continue
        reason = rejection_reason(record, thresholds)
        if reason is None:
            print(record.to_json())
        else:
            rejects.append(f"{record.clip_id}\t{reason}")
    rejects_path = Path(args.rejects)
    rejects_path.parent.mkdir(parents=True, exist_ok=True)
    rejects_path.write_text("".join(r + "\n" for r in rejects))
    if n_malformed:
        print(f"warning: {n_malformed} malformed line(s) skipped", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_eval_separation(args) -> int:
    model, _, _ = checkpoint_load(args.checkpoint)
    report = evaluate_separation(
        model, model.config, n_eval=args.n_eval,
        eval_seed=args.seed if args.seed is not None else 1234,
        conditional=not args.unconditional,
    )
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinflow",
        description="Twin-backbone flow matching with reference conditioning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on the synthetic cluster stream")
    p_train.add_argument("--config", default=None, help="JSON config path")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--steps", type=int, default=None, help="override train_steps")
    p_train.add_argument("--out", default="out", help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="generate latents from a checkpoint")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--identity", type=int, default=0)
    p_sample.add_argument("--timbre", type=int, default=0)
    p_sample.add_argument("--text-id", type=int, default=0)
    p_sample.add_argument("--guidance-video", type=float, default=None)
    p_sample.add_argument("--guidance-audio", type=float, default=None)
    p_sample.add_argument("--steps", type=int, default=None)
    p_sample.add_argument("--seed", type=int, default=None)
    p_sample.add_argument("--unconditional", action="store_true",
                          help="sample the reference-blocked branch only")
    p_sample.add_argument("--out", default="out", help="output directory")
    p_sample.set_defaults(func=cmd_sample)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--config", default=None)
    p_grad.add_argument("--seed", type=int, default=None)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.add_argument("--max-entries", type=int, default=None,
                        help="subsample large parameters to this many entries")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_filter = sub.add_parser("filter", help="apply curation thresholds to a manifest")
    p_filter.add_argument("--manifest", required=True, help="JSONL path or '-' for stdin")
    p_filter.add_argument("--rejects", default="rejects.tsv",
                          help="side file for (clip_id, reason) pairs")
    p_filter.add_argument("--max-offset", type=int, default=3)
    p_filter.add_argument("--min-confidence", type=float, default=1.5)
    p_filter.add_argument("--min-aesthetic", type=float, default=0.3)
    p_filter.add_argument("--min-duration", type=float, default=10.0)
    p_filter.set_defaults(func=cmd_filter)

    p_eval = sub.add_parser("eval-separation", help="cluster conditioning metrics")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--n-eval", type=int, default=50)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--unconditional", action="store_true")
    p_eval.set_defaults(func=cmd_eval_separation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse uses exit code 2 for usage errors; remap to the contract.
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TwinflowError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
