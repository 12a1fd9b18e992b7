"""Command-line entry point wiring the pipeline stages end to end.

Every subcommand resolves one YAML config (plus ``--set`` overrides),
derives its artifact filenames from the config hash, writes exactly once,
and drops a provenance sidecar next to each output. Reruns with the same
config and seed produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfg
from .credibility import corpus_stats, lowpass_smooth
from .exceptions import ConfigError, DivergenceError
from .features import load_corpus, save_corpus
from .generator import GenBundle, NoiseSchedule, build_vocab, load_generator, prepare_grids, sample_motion, train_generator
from .pvae import load_pvae, train_pvae
from .retrieval import load_evaluator, train_evaluator
from .seeding import substream_seed
from .skeleton import build_default_skeleton
from .synthdata import GRAMMAR, make_corpus

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _load(args) -> dict:
    config = cfg.load_config(args.config, args.set or [])
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "out_dir", None):
        config["out_dir"] = args.out_dir
    return config


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    config = _load(args)
    if args.noise_profile:
        config = cfg.apply_noise_profile(config, args.noise_profile)
    if args.size is not None:
        config["synth"]["size"] = args.size
    corpus_path = cfg.ensure_new(cfg.artifact_path(config, "corpus", "jsonl"))
    manifest_path = cfg.ensure_new(cfg.artifact_path(config, "manifest", "json"))
    records, manifest = make_corpus(cfg.corpus_config(config))
    save_corpus(records, corpus_path)
    _write_json(manifest_path, manifest)
    cfg.write_provenance(corpus_path, config, "synth")
    cfg.write_provenance(manifest_path, config, "synth")
    print(f"wrote {corpus_path} ({len(records)} records) and {manifest_path}")
    return 0


def cmd_curate(args) -> int:
    config = _load(args)
    if args.tau is not None:
        config["curate"]["tau"] = args.tau
    if args.cutoff_hz is not None:
        config["curate"]["cutoff_hz"] = args.cutoff_hz
    corpus_path = Path(args.corpus) if args.corpus else cfg.artifact_path(config, "corpus", "jsonl")
    records = load_corpus(corpus_path)
    _, partition = build_default_skeleton()
    smoothed = [lowpass_smooth(r, config["curate"]["cutoff_hz"]) for r in records]
    stats = corpus_stats(smoothed, partition, config["curate"]["tau"])
    curated_path = cfg.ensure_new(cfg.artifact_path(config, "curated", "jsonl"))
    stats_path = cfg.ensure_new(cfg.artifact_path(config, "stats", "json"))
    save_corpus(smoothed, curated_path)
    _write_json(stats_path, stats)
    cfg.write_provenance(curated_path, config, "curate")
    cfg.write_provenance(stats_path, config, "curate")
    print(f"wrote {curated_path} and {stats_path}")
    print(f"full-body fraction: {stats['full_body_fraction']:.4f}")
    return 0


def cmd_train_vae(args) -> int:
    config = _load(args)
    corpus_path = Path(args.corpus) if args.corpus else cfg.artifact_path(config, "corpus", "jsonl")
    records = load_corpus(corpus_path)
    skeleton, partition = build_default_skeleton()
    bundle, log = train_pvae(records, cfg.vae_config(config), skeleton, partition)
    ckpt = cfg.ensure_new(cfg.artifact_path(config, "vae", "npz"))
    bundle.save(ckpt)
    cfg.write_provenance(ckpt, config, "train-vae")
    last = log[-1]
    print(f"wrote {ckpt}; final recon={last.recon:.5f} kl={last.kl:.3f} val={last.val_recon:.5f}")
    return 0


def cmd_train_gen(args) -> int:
    config = _load(args)
    corpus_path = Path(args.corpus) if args.corpus else cfg.artifact_path(config, "corpus", "jsonl")
    vae_path = Path(args.vae) if args.vae else cfg.artifact_path(config, "vae", "npz")
    records = load_corpus(corpus_path)
    vae = load_pvae(vae_path)
    skeleton, partition = build_default_skeleton()
    grids, token_mean, token_std = prepare_grids(
        records, vae, skeleton, partition,
        ignore_credibility=config["gen"]["ignore_credibility"],
    )
    gen_conf = cfg.gen_config(config, vae.latent_dim, vae.num_parts)
    vocab = build_vocab(GRAMMAR.vocabulary())
    model, log = train_generator(grids, gen_conf, vocab)
    bundle = GenBundle(
        model=model,
        config=gen_conf,
        schedule=NoiseSchedule.linear(gen_conf.timesteps, gen_conf.beta_start, gen_conf.beta_end),
        token_mean=token_mean,
        token_std=token_std,
    )
    ckpt = cfg.ensure_new(cfg.artifact_path(config, "gen", "npz"))
    bundle.save(ckpt)
    cfg.write_provenance(ckpt, config, "train-gen")
    print(f"wrote {ckpt}; final loss={log[-1].loss:.5f}")
    return 0


def cmd_train_eval(args) -> int:
    config = _load(args)
    from .evaluation import build_evaluator

    scale = cfg.pipeline_scale(config)
    bundle, heldout = build_evaluator(scale, config["seed"])
    ckpt = cfg.ensure_new(cfg.artifact_path(config, "evaluator", "npz"))
    bundle.save(ckpt)
    cfg.write_provenance(ckpt, config, "train-eval")
    print(f"wrote {ckpt}; held-out: {heldout}")
    return 0


def cmd_sample(args) -> int:
    config = _load(args)
    vae_path = Path(args.vae) if args.vae else cfg.artifact_path(config, "vae", "npz")
    gen_path = Path(args.gen) if args.gen else cfg.artifact_path(config, "gen", "npz")
    vae = load_pvae(vae_path)
    gen = load_generator(gen_path)
    length = args.length or config["sample"]["length"]
    steps = args.steps or config["sample"]["decode_steps"]
    seed = substream_seed(config["seed"], "sample")
    record = sample_motion(
        args.prompt, length, gen, vae, seed,
        decode_steps=steps, ddpm_steps=config["sample"]["ddpm_steps"],
    )
    out = cfg.ensure_new(cfg.artifact_path(config, "sample", "jsonl"))
    save_corpus([record], out)
    cfg.write_provenance(out, config, "sample")
    print(f"wrote {out} ({record.num_frames} frames for prompt {args.prompt!r})")
    return 0


def cmd_evaluate(args) -> int:
    config = _load(args)
    from .evaluation import clean_reference, evaluate_model

    vae = load_pvae(Path(args.vae) if args.vae else cfg.artifact_path(config, "vae", "npz"))
    gen = load_generator(Path(args.gen) if args.gen else cfg.artifact_path(config, "gen", "npz"))
    evaluator = load_evaluator(
        Path(args.evaluator) if args.evaluator else cfg.artifact_path(config, "evaluator", "npz")
    )
    scale = cfg.pipeline_scale(config)
    real = clean_reference(scale, substream_seed(config["seed"], "real"))
    report = evaluate_model(
        gen, vae, evaluator, real,
        samples_per_prompt=config["eval"]["samples_per_prompt"],
        length=config["eval"]["length"],
        seed=substream_seed(config["seed"], "evaluate"),
        decode_steps=config["gen"]["decode_steps"],
        ddpm_steps=config["gen"]["ddpm_steps"],
    )
    out = cfg.ensure_new(cfg.artifact_path(config, "report", "json"))
    _write_json(out, report.to_dict())
    cfg.write_provenance(out, config, "evaluate")
    print(f"wrote {out}")
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    config = _load(args)
    from .evaluation import plot_sweep, robustness_sweep, sweep_rows_to_csv

    scale = cfg.pipeline_scale(config)
    result = robustness_sweep(config["sweep"]["proportions"], scale)
    json_path = cfg.ensure_new(cfg.artifact_path(config, "sweep", "json"))
    csv_path = cfg.ensure_new(cfg.artifact_path(config, "sweep", "csv"))
    png_path = cfg.ensure_new(cfg.artifact_path(config, "sweep", "png"))
    _write_json(json_path, result)
    with open(csv_path, "w") as fh:
        fh.write(sweep_rows_to_csv(result))
    plot_sweep(result, png_path)
    for path in (json_path, csv_path):
        cfg.write_provenance(path, config, "sweep")
    print(f"wrote {json_path}, {csv_path}, {png_path}")
    return 0


def cmd_ablate(args) -> int:
    config = _load(args)
    from .evaluation import ablate

    scale = cfg.pipeline_scale(config)
    scale = replace(scale, corpus_size=config["ablate"]["corpus_size"])
    result = ablate(scale, noise=config["ablate"]["noise"])
    out = cfg.ensure_new(cfg.artifact_path(config, "ablate", "json"))
    _write_json(out, result)
    cfg.write_provenance(out, config, "ablate")
    print(f"wrote {out}")
    print(json.dumps(result, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partmotion",
        description="Part-aware text-to-motion generation on partially credible data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="YAML config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        p.add_argument("--out-dir", type=str, default=None, help="override the output directory")

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    common(p)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--noise-profile", type=str, default=None,
                   choices=sorted(cfg.NOISE_PROFILES))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("curate", help="low-pass smooth a corpus and report stats")
    common(p)
    p.add_argument("--corpus", type=str, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--cutoff-hz", type=float, default=None)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train-vae", help="train the part-aware VAE")
    common(p)
    p.add_argument("--corpus", type=str, default=None)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train-gen", help="train the masked generator")
    common(p)
    p.add_argument("--corpus", type=str, default=None)
    p.add_argument("--vae", type=str, default=None)
    p.set_defaults(func=cmd_train_gen)

    p = sub.add_parser("train-eval", help="train the retrieval evaluator")
    common(p)
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("sample", help="generate one motion from a prompt")
    common(p)
    p.add_argument("--prompt", type=str, required=True)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--vae", type=str, default=None)
    p.add_argument("--gen", type=str, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="score a trained generator")
    common(p)
    p.add_argument("--vae", type=str, default=None)
    p.add_argument("--gen", type=str, default=None)
    p.add_argument("--evaluator", type=str, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="credible-proportion sensitivity sweep")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="reconstruction and generation ablations")
    common(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (FileNotFoundError, FileExistsError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, "divergence", str(exc))
    except ValueError as exc:
        return _fail(EXIT_DATA, "data", str(exc))


if __name__ == "__main__":
    sys.exit(main())
