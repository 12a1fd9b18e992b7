"""Model evaluation, the credible-proportion sweep, and the ablation grid.

Every run here is a pure function of its configs and seeds: corpora are
rebuilt from seeds, training is deterministic, and reports carry the
evaluator checksum so numbers are attributable to one feature space.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .generator import (
    GenBundle,
    GenConfig,
    build_vocab,
    prepare_grids,
    sample_motions,
    train_generator,
)
from .metrics import fid, mm_distance, mpjpe, r_precision
from .pvae import (
    PVAEBundle,
    PVAEConfig,
    masked_mpjpe,
    reconstruct_positions,
    train_pvae,
)
from .retrieval import (
    EvalConfig,
    EvaluatorBundle,
    encode_motion_records,
    encode_prompts,
    train_evaluator,
)
from .seeding import rng_for, substream_seed
from .skeleton import build_default_skeleton
from .synthdata import GRAMMAR, CorpusConfig, NoiseSpec, generate_clean, make_corpus


@dataclass
class MetricReport:
    fid: float
    r_precision: dict[str, float]
    mm_distance: float
    mpjpe: float | None
    num_generated: int
    num_real: int
    evaluator_checksum: str
    seed: int

    def validate(self) -> None:
        r1, r2, r3 = (self.r_precision[f"R@{k}"] for k in (1, 2, 3))
        if not (0.0 <= r1 <= r2 <= r3 <= 1.0):
            raise ValueError(f"top-k accuracies must be nested: {self.r_precision}")
        if self.fid < 0.0:
            raise ValueError(f"negative distribution distance: {self.fid}")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_records(
    generated,
    real,
    evaluator: EvaluatorBundle,
    seed: int = 0,
    batch_size: int = 32,
    rounds: int = 4,
) -> MetricReport:
    """Score generated records against a real set in the evaluator's space."""
    skeleton, _ = build_default_skeleton()
    gen_emb = encode_motion_records(evaluator, generated, skeleton)
    real_emb = encode_motion_records(evaluator, real, skeleton)
    text_emb = encode_prompts(evaluator, [r.prompt for r in generated])
    report = MetricReport(
        fid=fid(gen_emb, real_emb),
        r_precision=r_precision(
            gen_emb, text_emb, batch_size, rng_for(seed, "rprec"), rounds
        ),
        mm_distance=mm_distance(gen_emb, text_emb),
        mpjpe=None,
        num_generated=len(generated),
        num_real=len(real),
        evaluator_checksum=evaluator.checksum(),
        seed=seed,
    )
    report.validate()
    return report


def evaluate_model(
    gen: GenBundle,
    vae: PVAEBundle,
    evaluator: EvaluatorBundle,
    real,
    prompts: list[str] | None = None,
    samples_per_prompt: int = 3,
    length: int = 64,
    seed: int = 0,
    decode_steps: int | None = None,
    ddpm_steps: int | None = None,
) -> MetricReport:
    """Generate motions for the prompts and score them against the real set."""
    if prompts is None:
        prompts = sorted({r.prompt for r in real})
    request = [p for p in prompts for _ in range(samples_per_prompt)]
    generated = sample_motions(
        request, length, gen, vae, substream_seed(seed, "gen-eval"),
        decode_steps, ddpm_steps,
    )
    return evaluate_records(generated, real, evaluator, seed)


# ---------------------------------------------------------------------------
# Shared demo-scale pipeline pieces


@dataclass
class PipelineScale:
    """One knob set for the trend harnesses (sweep and ablation)."""

    corpus_size: int = 120
    length: int = 64
    real_size: int = 120
    vae: PVAEConfig = field(default_factory=lambda: PVAEConfig(epochs=80))
    gen: GenConfig = field(default_factory=lambda: GenConfig(epochs=60))
    evaluator: EvalConfig = field(default_factory=lambda: EvalConfig(epochs=60))
    samples_per_prompt: int = 3
    decode_steps: int = 8
    ddpm_steps: int = 25
    seed: int = 0


def clean_reference(scale: PipelineScale, seed: int):
    """Held-out clean records used as the real distribution."""
    prompts = GRAMMAR.productions()
    return [
        generate_clean(
            prompts[i % len(prompts)],
            scale.length,
            seed=substream_seed(seed, "reference", i),
            record_id=f"ref{i:05d}",
        )
        for i in range(scale.real_size)
    ]


def build_evaluator(scale: PipelineScale, seed: int) -> tuple[EvaluatorBundle, dict]:
    config = CorpusConfig(
        size=scale.corpus_size,
        length_min=scale.length,
        length_max=scale.length,
        seed=substream_seed(seed, "evaluator-corpus"),
        noise=NoiseSpec(target_cell_noise=0.0),
    )
    records, _ = make_corpus(config)
    vocab = build_vocab(GRAMMAR.vocabulary())
    eval_config = replace(scale.evaluator, seed=substream_seed(seed, "evaluator"))
    return train_evaluator(records, eval_config, vocab)


def train_pipeline(
    records,
    scale: PipelineScale,
    seed: int,
    robust: bool = True,
    vae_variant: str = "shared",
    head: str = "diffusion",
) -> tuple[GenBundle, PVAEBundle]:
    """Train P-VAE then generator on a corpus; the blind baseline sets
    ``robust=False`` and treats every cell as credible."""
    skeleton, partition = build_default_skeleton()
    vae_config = replace(
        scale.vae,
        variant=vae_variant,
        ignore_credibility=not robust,
        seed=substream_seed(seed, "vae"),
    )
    vae, _ = train_pvae(records, vae_config, skeleton, partition)

    grids, token_mean, token_std = prepare_grids(
        records, vae, skeleton, partition, ignore_credibility=not robust
    )
    gen_config = replace(
        scale.gen,
        latent_dim=vae.latent_dim,
        num_parts=vae.num_parts,
        head=head,
        ignore_credibility=not robust,
        decode_steps=scale.decode_steps,
        ddpm_steps=scale.ddpm_steps,
        seed=substream_seed(seed, "gen"),
    )
    vocab = build_vocab(GRAMMAR.vocabulary())
    model, _ = train_generator(grids, gen_config, vocab)
    from .generator import NoiseSchedule

    bundle = GenBundle(
        model=model,
        config=gen_config,
        schedule=NoiseSchedule.linear(
            gen_config.timesteps, gen_config.beta_start, gen_config.beta_end
        ),
        token_mean=token_mean,
        token_std=token_std,
    )
    return bundle, vae


# ---------------------------------------------------------------------------
# Sensitivity sweep over credible proportions


def robustness_sweep(
    proportions: list[float],
    scale: PipelineScale,
    evaluator: EvaluatorBundle | None = None,
    real=None,
) -> dict:
    """Train the robust model and the credibility-blind baseline at each
    credible proportion; returns rows of metrics per (proportion, model)."""
    if any(not 0.0 < q <= 1.0 for q in proportions):
        raise ValueError("proportions must lie in (0, 1]")
    seed = scale.seed
    if evaluator is None:
        evaluator, _ = build_evaluator(scale, seed)
    if real is None:
        real = clean_reference(scale, substream_seed(seed, "real"))

    rows = []
    for q in proportions:
        corpus_config = CorpusConfig(
            size=scale.corpus_size,
            length_min=scale.length,
            length_max=scale.length,
            seed=substream_seed(seed, "sweep-corpus", q),
            noise=NoiseSpec(target_cell_noise=round(1.0 - q, 6)),
        )
        records, _ = make_corpus(corpus_config)
        for model_name, robust in (("robust", True), ("baseline", False)):
            gen, vae = train_pipeline(
                records, scale, substream_seed(seed, "sweep", q, model_name), robust
            )
            report = evaluate_model(
                gen,
                vae,
                evaluator,
                real,
                samples_per_prompt=scale.samples_per_prompt,
                length=scale.length,
                seed=substream_seed(seed, "sweep-eval", q, model_name),
                decode_steps=scale.decode_steps,
                ddpm_steps=scale.ddpm_steps,
            )
            rows.append(
                {
                    "proportion": q,
                    "model": model_name,
                    "fid": report.fid,
                    "r1": report.r_precision["R@1"],
                    "r2": report.r_precision["R@2"],
                    "r3": report.r_precision["R@3"],
                    "mmd": report.mm_distance,
                }
            )
    return {
        "proportions": list(proportions),
        "rows": rows,
        "evaluator_checksum": evaluator.checksum(),
        "seed": seed,
    }


def sweep_rows_to_csv(result: dict) -> str:
    lines = ["proportion,model,fid,r1,r2,r3,mmd"]
    for row in result["rows"]:
        lines.append(
            f"{row['proportion']},{row['model']},{row['fid']:.6f},"
            f"{row['r1']:.6f},{row['r2']:.6f},{row['r3']:.6f},{row['mmd']:.6f}"
        )
    return "\n".join(lines) + "\n"


def plot_sweep(result: dict, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for model, color in (("robust", "tab:blue"), ("baseline", "tab:orange")):
        rows = sorted(
            (r for r in result["rows"] if r["model"] == model),
            key=lambda r: r["proportion"],
        )
        xs = [r["proportion"] for r in rows]
        axes[0].plot(xs, [r["fid"] for r in rows], "o-", color=color, label=model)
        axes[1].plot(xs, [r["r1"] for r in rows], "o-", color=color, label=model)
    axes[0].set_xlabel("credible proportion")
    axes[0].set_ylabel("FID")
    axes[1].set_xlabel("credible proportion")
    axes[1].set_ylabel("R@1")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Ablations


RECON_VARIANTS = ("full", "no_shared_params", "no_part_decomposition")
GEN_VARIANTS = ("full", "no_part_decomposition", "no_diffusion_head")

_VAE_VARIANT_OF = {
    "full": "shared",
    "no_shared_params": "per_part",
    "no_part_decomposition": "fullbody",
}


def ablate(
    scale: PipelineScale,
    noise: float = 0.4,
    recon_variants=RECON_VARIANTS,
    gen_variants=GEN_VARIANTS,
    evaluator: EvaluatorBundle | None = None,
    real=None,
) -> dict:
    """Reconstruction and generation ablations on the standard noisy corpus."""
    seed = scale.seed
    skeleton, partition = build_default_skeleton()
    corpus_config = CorpusConfig(
        size=scale.corpus_size,
        length_min=scale.length,
        length_max=scale.length,
        seed=substream_seed(seed, "ablate-corpus"),
        noise=NoiseSpec(target_cell_noise=noise),
    )
    records, _ = make_corpus(corpus_config)
    if real is None:
        real = clean_reference(scale, substream_seed(seed, "real"))

    recon_rows = []
    vae_cache: dict[str, PVAEBundle] = {}
    for variant in recon_variants:
        vae_config = replace(
            scale.vae,
            variant=_VAE_VARIANT_OF[variant],
            seed=substream_seed(seed, "ablate-vae", variant),
        )
        vae, _ = train_pvae(records, vae_config, skeleton, partition)
        vae_cache[variant] = vae
        errs = []
        for rec in real[: min(len(real), 48)]:
            pos, cred = reconstruct_positions(rec, vae, skeleton, partition)
            errs.append(masked_mpjpe(pos, rec.positions, cred, vae.part_joints))
        recon_rows.append({"variant": variant, "mpjpe": float(np.mean(errs))})

    gen_rows = []
    if gen_variants:
        if evaluator is None:
            evaluator, _ = build_evaluator(scale, seed)
        for variant in gen_variants:
            vae_variant = "fullbody" if variant == "no_part_decomposition" else "shared"
            head = "regression" if variant == "no_diffusion_head" else "diffusion"
            gen, vae = train_pipeline(
                records,
                scale,
                substream_seed(seed, "ablate-gen", variant),
                robust=True,
                vae_variant=vae_variant,
                head=head,
            )
            report = evaluate_model(
                gen,
                vae,
                evaluator,
                real,
                samples_per_prompt=scale.samples_per_prompt,
                length=scale.length,
                seed=substream_seed(seed, "ablate-eval", variant),
                decode_steps=scale.decode_steps,
                ddpm_steps=scale.ddpm_steps,
            )
            gen_rows.append(
                {
                    "variant": variant,
                    "fid": report.fid,
                    "r1": report.r_precision["R@1"],
                }
            )
    return {
        "noise": noise,
        "reconstruction": recon_rows,
        "generation": gen_rows,
        "seed": seed,
    }
