"""Command-line entry point.

Subcommands: synth, train-prior, train-restore, estimate, restore, eval.
Exit codes: 0 success, 1 usage error, 2 runtime failure.  Every run writes
its resolved configuration (including the seed) into the output directory;
outputs are timestamp-free so reruns compare byte for byte.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, resolve_config, write_run_config
from .evaluate import (
    DescriptorEmbeddingProvider,
    Gallery,
    evaluate_restoration,
    load_probes,
    topk_identification,
)
from .features import load_feature_extractor
from .image import image_to_nchw, load_image, nchw_to_image, save_image
from .losses import LossConfig
from .model import ForwardMode, build_atnet1_spec, build_atnet_spec, forward
from .rng import SeededRng
from .synth import DegradationConfig, generate_dataset
from .train import (
    DEFAULT_ITERS,
    STAGE_PRIOR,
    STAGE_RESTORATION,
    TrainRun,
    train_prior_network,
    train_restoration_network,
)
from .uncertainty import estimate_prior, prior_to_nchw, save_uncertainty

COMMANDS = ("synth", "train-prior", "train-restore", "estimate", "restore", "eval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="atnet", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    flag_keys = {
        "--seed": "seed",
        "--threads": "threads",
        "--S": "S",
        "--iters": "iters",
        "--batch": "batch",
        "--input": "input",
        "--output": "output",
        "--manifest": "manifest",
        "--atnet1-ckpt": "atnet1_ckpt",
        "--atnet-ckpt": "atnet_ckpt",
        "--probes": "probes",
        "--gallery": "gallery",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, add_help=True)
        p.add_argument("--config", default=None, help="flat key=value config file")
        for flag, key in flag_keys.items():
            p.add_argument(flag, dest=key, default=None)
        p.add_argument(
            "--set",
            dest="extra",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any other config key",
        )
    return parser


def _overrides_from_args(args) -> dict:
    overrides = {}
    for key in ("seed", "threads", "S", "iters", "batch", "input", "output",
                "manifest", "atnet1_ckpt", "atnet_ckpt", "probes", "gallery"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    for item in getattr(args, "extra", []):
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def _require(cfg: RunConfig, *keys):
    for key in keys:
        if not getattr(cfg, key):
            raise UsageError(f"missing required option --{key.replace('_', '-')}")


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.exists():
        raise FileNotFoundError(f"missing {what}: {path}")
    return path


def _degradation_config(cfg: RunConfig) -> DegradationConfig:
    return DegradationConfig(
        n_warp_centers=cfg.n_warp_centers,
        warp_strength=cfg.warp_strength,
        warp_falloff_sigma=cfg.warp_falloff_sigma,
        psf_sigma=cfg.psf_sigma,
        noise_sigma=cfg.noise_sigma,
        blur_first=cfg.blur_first,
        seed=cfg.seed,
    ).validate()


def _loss_config(cfg: RunConfig) -> LossConfig:
    extractor = None
    if cfg.lambda_p > 0:
        extractor = load_feature_extractor(cfg.feature_weights, cfg.feature_seed, cfg.loss_tap)
    return LossConfig(lambda_p=cfg.lambda_p, extractor=extractor).validate()


def _train_run(cfg: RunConfig, stage: str) -> TrainRun:
    iters = cfg.iters if cfg.iters > 0 else DEFAULT_ITERS[stage]
    return TrainRun(
        stage=stage,
        max_iters=iters,
        batch_size=cfg.batch,
        seed=cfg.seed,
        lr=cfg.lr,
        checkpoint_every=cfg.checkpoint_every,
        mc_samples=cfg.S,
        prior_reduction=cfg.reduction,
        cache_prior=cfg.cache_prior,
        resume_from=cfg.resume_from,
    ).validate()


def _cmd_synth(cfg: RunConfig) -> int:
    _require(cfg, "input", "output")
    _require_file(cfg.input, "clean image directory")
    write_run_config(cfg, cfg.output, "synth")
    manifest = generate_dataset(
        cfg.input, cfg.output, _degradation_config(cfg), cfg.pairs_per_image, cfg.threads
    )
    print(f"wrote {manifest}")
    return 0


def _cmd_train_prior(cfg: RunConfig) -> int:
    _require(cfg, "manifest", "output")
    _require_file(cfg.manifest, "manifest")
    write_run_config(cfg, cfg.output, "train-prior")
    spec = build_atnet1_spec(cfg.dropout_rate, cfg.upsample_mode)
    ckpt = train_prior_network(
        _train_run(cfg, STAGE_PRIOR), cfg.manifest, _loss_config(cfg), cfg.output, spec
    )
    print(f"wrote {ckpt}")
    return 0


def _cmd_train_restore(cfg: RunConfig) -> int:
    _require(cfg, "manifest", "atnet1_ckpt", "output")
    _require_file(cfg.manifest, "manifest")
    _require_file(cfg.atnet1_ckpt, "prior network checkpoint")
    write_run_config(cfg, cfg.output, "train-restore")
    prior_channels = 1 if cfg.reduction == "channel_mean" else 3
    spec = build_atnet_spec(prior_channels, cfg.dropout_rate, cfg.upsample_mode)
    ckpt = train_restoration_network(
        _train_run(cfg, STAGE_RESTORATION), cfg.manifest, cfg.atnet1_ckpt,
        _loss_config(cfg), cfg.output, spec,
    )
    print(f"wrote {ckpt}")
    return 0


def _cmd_estimate(cfg: RunConfig) -> int:
    _require(cfg, "input", "atnet1_ckpt", "output")
    _require_file(cfg.input, "input image")
    ck1 = load_checkpoint(_require_file(cfg.atnet1_ckpt, "prior network checkpoint"))
    write_run_config(cfg, cfg.output, "estimate")
    y = load_image(cfg.input)
    prior, _ = estimate_prior(
        ck1.spec, ck1.params, y, cfg.S, SeededRng(cfg.seed), cfg.reduction
    )
    npy_path, png_path = save_uncertainty(prior, Path(cfg.output) / "prior")
    print(f"wrote {npy_path} and {png_path}")
    return 0


def _cmd_restore(cfg: RunConfig) -> int:
    _require(cfg, "input", "atnet1_ckpt", "atnet_ckpt", "output")
    _require_file(cfg.input, "input image")
    ck1 = load_checkpoint(_require_file(cfg.atnet1_ckpt, "prior network checkpoint"))
    ck = load_checkpoint(_require_file(cfg.atnet_ckpt, "restoration checkpoint"))
    write_run_config(cfg, cfg.output, "restore")
    y = load_image(cfg.input)
    reduction = ck.meta.get("prior_reduction", cfg.reduction)
    prior, _ = estimate_prior(ck1.spec, ck1.params, y, cfg.S, SeededRng(cfg.seed), reduction)
    net_in = np.concatenate([image_to_nchw(y), prior_to_nchw(prior)], axis=1)
    restored = nchw_to_image(
        forward(ck.spec, ck.params, net_in, ForwardMode.EVAL_DETERMINISTIC)
    )
    out_path = Path(cfg.output) / "restored.png"
    save_image(restored, out_path)
    if cfg.save_prior:
        save_uncertainty(prior, Path(cfg.output) / "prior")
    print(f"wrote {out_path}")
    return 0


def _cmd_eval(cfg: RunConfig) -> int:
    run_metrics = bool(cfg.manifest)
    run_ident = bool(cfg.probes or cfg.gallery)
    if not run_metrics and not run_ident:
        raise UsageError("eval needs --manifest and/or --probes with --gallery")
    _require(cfg, "output")
    report = None
    if run_metrics:
        _require(cfg, "atnet1_ckpt", "atnet_ckpt")
        _require_file(cfg.manifest, "manifest")
        _require_file(cfg.atnet1_ckpt, "prior network checkpoint")
        _require_file(cfg.atnet_ckpt, "restoration checkpoint")
    if run_ident:
        _require(cfg, "probes", "gallery")
        _require_file(cfg.probes, "probe directory")
        _require_file(cfg.gallery, "gallery directory")
    write_run_config(cfg, cfg.output, "eval")
    if run_metrics:
        extractor = load_feature_extractor(cfg.feature_weights, cfg.feature_seed, cfg.eval_tap)
        report = evaluate_restoration(
            cfg.manifest, cfg.atnet1_ckpt, cfg.atnet_ckpt, cfg.S, cfg.seed,
            extractor, cfg.threads,
        )
    if run_ident:
        if cfg.embed_weights:
            provider = DescriptorEmbeddingProvider.load(cfg.embed_weights, cfg.embed_tap)
        else:
            provider = DescriptorEmbeddingProvider.seeded(cfg.embed_seed, cfg.embed_tap)
        gallery = Gallery.from_dir(cfg.gallery, provider)
        accuracy = topk_identification(load_probes(cfg.probes), gallery, provider)
        if report is None:
            from .evaluate import MetricsReport

            report = MetricsReport([], [], {"seed": cfg.seed}, identification=accuracy)
        else:
            report.identification = accuracy
    out_dir = Path(cfg.output)
    (out_dir / "report.json").write_text(report.to_json_text(), encoding="utf-8")
    (out_dir / "report.txt").write_text(report.to_table_text(), encoding="utf-8")
    print(f"wrote {out_dir / 'report.json'}")
    return 0


_DISPATCH = {
    "synth": _cmd_synth,
    "train-prior": _cmd_train_prior,
    "train-restore": _cmd_train_restore,
    "estimate": _cmd_estimate,
    "restore": _cmd_restore,
    "eval": _cmd_eval,
}


def run_command(name: str, cfg: RunConfig) -> int:
    """Run one pipeline stage with a fully resolved configuration."""
    if name not in _DISPATCH:
        raise UsageError(f"unknown command {name!r} (choose from {', '.join(COMMANDS)})")
    return _DISPATCH[name](cfg)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required (see --help)")
        cfg = resolve_config(args.config, _overrides_from_args(args))
        return run_command(args.command, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
