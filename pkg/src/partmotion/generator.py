"""Credibility-driven masked generation over the part-token grid.

A bidirectional transformer reads the N x P grid of continuous latent
tokens with masked cells replaced by a learned mask vector, conditioned on
a prepended text token. Noisy cells are always masked and never produce a
training signal: their values cannot reach the loss at all. A small
denoising head models each masked cell's latent distribution conditioned
on the transformer output, trained with the standard noise-prediction
objective and sampled ancestrally at inference.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import DivergenceError
from .features import MotionRecord, decode_features, decode_fullbody
from .pvae import PVAEBundle, decode as pvae_decode, encode_record_tokens
from .seeding import rng_for, substream_seed
from .skeleton import PartPartition, SkeletonSpec, build_default_skeleton


# ---------------------------------------------------------------------------
# Masking law


@dataclass
class MaskPlan:
    masked: np.ndarray      # (T, P) bool
    loss_mask: np.ndarray   # (T, P) bool: masked & credible
    alpha: float
    beta: float
    ratio_unreachable: bool = False


def make_mask_plan(
    credible: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    law: str = "normalized",
) -> MaskPlan:
    """Mask every noisy cell; mask credible cells at a rate that unifies the
    overall masked fraction to alpha.

    The ``literal`` law uses probability alpha - beta for credible cells;
    the default ``normalized`` law uses (alpha - beta) / (1 - beta), which
    is the rate that actually makes the expected overall fraction alpha.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if law not in ("normalized", "literal"):
        raise ValueError(f"unknown masking law {law!r}")
    credible = np.asarray(credible, dtype=bool)
    beta = float(1.0 - credible.mean())
    if beta >= 1.0:
        masked = np.ones_like(credible)
        return MaskPlan(
            masked=masked,
            loss_mask=np.zeros_like(credible),
            alpha=alpha,
            beta=beta,
            ratio_unreachable=alpha < beta,
        )
    if law == "normalized":
        p = (alpha - beta) / (1.0 - beta)
    else:
        p = alpha - beta
    p = float(np.clip(p, 0.0, 1.0))
    draw = rng.random(credible.shape) < p
    masked = ~credible | draw
    return MaskPlan(
        masked=masked,
        loss_mask=masked & credible,
        alpha=alpha,
        beta=beta,
        ratio_unreachable=alpha < beta,
    )


def cosine_unmask_counts(total: int, steps: int) -> list[int]:
    """Cells to reveal per step so the filled count follows a cosine curve."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    filled = [
        int(round(total * (1.0 - math.cos(math.pi * k / (2.0 * steps)))))
        for k in range(steps + 1)
    ]
    filled[-1] = total
    return [filled[k + 1] - filled[k] for k in range(steps)]


# ---------------------------------------------------------------------------
# Diffusion schedule and head


@dataclass
class NoiseSchedule:
    timesteps: int
    betas: np.ndarray      # (T,)
    alphabar: np.ndarray   # (T,) cumulative products of 1 - beta

    @classmethod
    def linear(cls, timesteps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.1):
        betas = np.linspace(beta_start, beta_end, timesteps)
        return cls(
            timesteps=timesteps, betas=betas, alphabar=np.cumprod(1.0 - betas)
        )

    def validate(self) -> None:
        if not (self.betas[0] > 0 and self.betas[-1] < 1):
            raise ValueError("betas must lie in (0, 1)")
        if (np.diff(self.betas) < 0).any():
            raise ValueError("betas must be non-decreasing")
        if (np.diff(self.alphabar) >= 0).any():
            raise ValueError("alphabar must be strictly decreasing")


def ddpm_forward(
    z0: np.ndarray, t: int | np.ndarray, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Corrupt a clean latent to timestep t (1-based)."""
    t_arr = np.asarray(t)
    if (t_arr < 1).any() or (t_arr > schedule.timesteps).any():
        raise ValueError(f"t must lie in [1, {schedule.timesteps}]")
    abar = schedule.alphabar[t_arr - 1]
    abar = np.expand_dims(abar, axis=-1) if np.ndim(z0) > np.ndim(abar) else abar
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def _timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class Denoiser(nn.Module):
    """Predicts the injected noise from (x_t, t, conditioning vector)."""

    def __init__(self, latent_dim: int, cond_dim: int, width: int, depth: int, time_dim: int):
        super().__init__()
        self.time_dim = time_dim
        layers: list[nn.Module] = []
        in_dim = latent_dim + cond_dim + time_dim
        for _ in range(depth - 1):
            layers += [nn.Linear(in_dim, width), nn.SiLU()]
            in_dim = width
        layers.append(nn.Linear(in_dim, latent_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        temb = _timestep_embedding(t, self.time_dim)
        return self.net(torch.cat([x_t, cond, temb], dim=-1))


# ---------------------------------------------------------------------------
# Transformer backbone


@dataclass
class GenConfig:
    latent_dim: int = 16
    num_parts: int = 5
    d_model: int = 128
    layers: int = 4
    heads: int = 4
    ffw: int = 512
    text_dim: int = 32
    max_frames: int = 512
    timesteps: int = 100
    beta_start: float = 1e-4
    # With only 100 steps, the variance ramp must be steeper than the
    # classic 1000-step 0.02 endpoint or the terminal marginal stays far
    # from the unit Gaussian the sampler starts at.
    beta_end: float = 0.1
    denoiser_width: int = 256
    denoiser_depth: int = 3
    time_embed_dim: int = 64
    head: str = "diffusion"  # diffusion | regression
    masking_law: str = "normalized"
    alpha_min: float = 0.5
    alpha_max: float = 1.0
    t_samples: int = 4
    lr: float = 1e-3
    epochs: int = 120
    batch_size: int = 16
    decode_steps: int = 8
    ddpm_steps: int = 100
    ignore_credibility: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.head not in ("diffusion", "regression"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.masking_law not in ("normalized", "literal"):
            raise ValueError(f"unknown masking law {self.masking_law!r}")
        if not 0.0 < self.alpha_min <= self.alpha_max <= 1.0:
            raise ValueError("need 0 < alpha_min <= alpha_max <= 1")
        if self.ddpm_steps > self.timesteps:
            raise ValueError("ddpm_steps cannot exceed timesteps")


class GenModel(nn.Module):
    def __init__(self, config: GenConfig, vocab: dict[str, int]):
        super().__init__()
        self.config = config
        self.vocab = dict(vocab)
        self.token_proj = nn.Linear(config.latent_dim, config.d_model)
        self.mask_token = nn.Parameter(torch.zeros(config.d_model))
        self.text_embedding = nn.Embedding(len(vocab), config.text_dim)
        self.text_proj = nn.Linear(config.text_dim, config.d_model)
        self.frame_pos = nn.Embedding(config.max_frames, config.d_model)
        self.part_pos = nn.Embedding(config.num_parts, config.d_model)
        layer = nn.TransformerEncoderLayer(
            d_model=config.d_model,
            nhead=config.heads,
            dim_feedforward=config.ffw,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        self.out_norm = nn.LayerNorm(config.d_model)
        if config.head == "diffusion":
            self.denoiser = Denoiser(
                config.latent_dim,
                config.d_model,
                config.denoiser_width,
                config.denoiser_depth,
                config.time_embed_dim,
            )
        else:
            self.regression_head = nn.Linear(config.d_model, config.latent_dim)
        nn.init.normal_(self.mask_token, std=0.02)

    def embed_prompt(self, prompt: str) -> torch.Tensor:
        """Mean of learned token embeddings; unknown words map to <unk>."""
        tokens = prompt.split()
        if not tokens:
            raise ValueError("empty prompt")
        ids = torch.tensor([self.vocab.get(tok, 0) for tok in tokens])
        return self.text_embedding(ids).mean(dim=0)

    def forward(
        self,
        tokens: torch.Tensor,   # (B, T, P, d) latent grid
        masked: torch.Tensor,   # (B, T, P) bool
        text_vec: torch.Tensor, # (B, text_dim)
    ) -> torch.Tensor:
        """Per-cell conditioning vectors (B, T, P, d_model).

        Masked cells' inputs are replaced by the mask token before anything
        can read them; attention is bidirectional.
        """
        b, t, p, _ = tokens.shape
        x = self.token_proj(tokens)
        x = torch.where(masked[..., None], self.mask_token.expand_as(x), x)
        x = x + self.frame_pos(torch.arange(t))[None, :, None, :]
        x = x + self.part_pos(torch.arange(p))[None, None, :, :]
        seq = x.reshape(b, t * p, -1)
        text_tok = self.text_proj(text_vec)[:, None, :]
        out = self.encoder(torch.cat([text_tok, seq], dim=1))
        return self.out_norm(out[:, 1:]).reshape(b, t, p, -1)


def embed_text(prompt: str, model: GenModel) -> np.ndarray:
    with torch.no_grad():
        return model.embed_prompt(prompt).numpy().astype(float)


# ---------------------------------------------------------------------------
# Losses


def diffusion_loss(
    z_targets: torch.Tensor,   # (B, T, P, d) clean latents
    zhat: torch.Tensor,        # (B, T, P, d_model) conditioning vectors
    loss_mask: torch.Tensor,   # (B, T, P) bool
    model: GenModel,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    t_samples: int = 1,
) -> torch.Tensor:
    """Noise-prediction error over loss cells; everything else is excluded
    before any randomness is drawn, so other cells contribute exactly zero."""
    idx = loss_mask.reshape(-1)
    if not bool(idx.any()):
        raise ValueError("empty loss mask")
    d = z_targets.shape[-1]
    z0 = z_targets.reshape(-1, d)[idx]
    cond = zhat.reshape(-1, zhat.shape[-1])[idx]
    if t_samples > 1:
        z0 = z0.repeat(t_samples, 1)
        cond = cond.repeat(t_samples, 1)
    n = z0.shape[0]
    t = torch.randint(1, schedule.timesteps + 1, (n,), generator=generator)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    abar = torch.from_numpy(schedule.alphabar).to(z0.dtype)[t - 1][:, None]
    x_t = torch.sqrt(abar) * z0 + torch.sqrt(1.0 - abar) * eps
    pred = model.denoiser(x_t, t, cond)
    return ((eps - pred) ** 2).mean()


def regression_loss(
    z_targets: torch.Tensor,
    zhat: torch.Tensor,
    loss_mask: torch.Tensor,
    model: GenModel,
) -> torch.Tensor:
    idx = loss_mask.reshape(-1)
    if not bool(idx.any()):
        raise ValueError("empty loss mask")
    d = z_targets.shape[-1]
    z0 = z_targets.reshape(-1, d)[idx]
    pred = model.regression_head(zhat.reshape(-1, zhat.shape[-1])[idx])
    return ((z0 - pred) ** 2).mean()


# ---------------------------------------------------------------------------
# Ancestral sampling


def ddpm_sample(
    cond: torch.Tensor,
    schedule: NoiseSchedule,
    model: GenModel,
    generator: torch.Generator | None = None,
    steps: int | None = None,
) -> torch.Tensor:
    """Sample latents for conditioning vectors (M, d_model) -> (M, d).

    Runs the reverse process on an evenly respaced timestep subsequence.
    """
    steps = schedule.timesteps if steps is None else steps
    if steps > schedule.timesteps or steps < 1:
        raise ValueError(f"steps must lie in [1, {schedule.timesteps}]")
    ts = np.unique(np.round(np.linspace(1, schedule.timesteps, steps)).astype(int))
    abar = schedule.alphabar
    m = cond.shape[0]
    d = model.config.latent_dim
    x = torch.randn((m, d), generator=generator, dtype=torch.float32)
    with torch.no_grad():
        for k in range(len(ts) - 1, -1, -1):
            t_cur = int(ts[k])
            abar_cur = abar[t_cur - 1]
            abar_prev = abar[int(ts[k - 1]) - 1] if k > 0 else 1.0
            beta_k = 1.0 - abar_cur / abar_prev
            t_vec = torch.full((m,), t_cur)
            eps_hat = model.denoiser(x, t_vec, cond)
            mean = (x - beta_k / math.sqrt(1.0 - abar_cur) * eps_hat) / math.sqrt(
                1.0 - beta_k
            )
            if k > 0:
                sigma = math.sqrt(beta_k * (1.0 - abar_prev) / (1.0 - abar_cur))
                x = mean + sigma * torch.randn((m, d), generator=generator)
            else:
                x = mean
    return x


# ---------------------------------------------------------------------------
# Bundle, training, sampling


@dataclass
class GenBundle:
    model: GenModel
    config: GenConfig
    schedule: NoiseSchedule
    token_mean: np.ndarray  # (d,)
    token_std: np.ndarray   # (d,)

    def save(self, path) -> None:
        arrays = {
            f"param.{k}": v.detach().numpy() for k, v in self.model.state_dict().items()
        }
        arrays["token_mean"] = self.token_mean
        arrays["token_std"] = self.token_std
        sidecar = {
            "kind": "generator",
            "config": asdict(self.config),
            "vocab": self.model.vocab,
        }
        save_checkpoint(path, arrays, sidecar)


def load_generator(path) -> GenBundle:
    arrays, sidecar = load_checkpoint(path)
    if sidecar.get("kind") != "generator":
        raise ValueError(f"{path} is not a generator checkpoint")
    config = GenConfig(**sidecar["config"])
    model = GenModel(config, sidecar["vocab"])
    state = {
        k[len("param."):]: torch.from_numpy(v)
        for k, v in arrays.items()
        if k.startswith("param.")
    }
    model.load_state_dict(state)
    model.eval()
    return GenBundle(
        model=model,
        config=config,
        schedule=NoiseSchedule.linear(config.timesteps, config.beta_start, config.beta_end),
        token_mean=arrays["token_mean"],
        token_std=arrays["token_std"],
    )


def build_vocab(tokens: list[str]) -> dict[str, int]:
    vocab = {"<unk>": 0}
    for tok in sorted(set(tokens)):
        vocab.setdefault(tok, len(vocab))
    return vocab


@dataclass
class GridExample:
    tokens: np.ndarray    # (T, P, d) normalized latents
    credible: np.ndarray  # (T, P) bool
    prompt: str


def prepare_grids(
    records: list[MotionRecord],
    vae: PVAEBundle,
    skeleton: SkeletonSpec,
    partition: PartPartition,
    ignore_credibility: bool = False,
) -> tuple[list[GridExample], np.ndarray, np.ndarray]:
    """Encode the corpus into token grids; token statistics come from
    credible cells only."""
    raw = []
    for record in records:
        tokens, cred = encode_record_tokens(record, vae, skeleton, partition)
        if ignore_credibility:
            cred = np.ones_like(cred)
        raw.append((tokens, cred, record.prompt))
    credible_tokens = np.concatenate(
        [tokens[cred] for tokens, cred, _ in raw if cred.any()], axis=0
    )
    mean = credible_tokens.mean(axis=0)
    std = np.maximum(credible_tokens.std(axis=0), 1e-4)
    grids = [
        GridExample(tokens=(tokens - mean) / std, credible=cred, prompt=prompt)
        for tokens, cred, prompt in raw
    ]
    return grids, mean, std


@dataclass
class GenTrainLogEntry:
    epoch: int
    loss: float
    noisy_cells_in_loss: int


def train_generator(
    grids: list[GridExample],
    config: GenConfig,
    vocab: dict[str, int],
) -> tuple[GenModel, list[GenTrainLogEntry]]:
    """Masked-prediction training over precomputed latent grids."""
    config.validate()
    if not grids:
        raise ValueError("no training grids")
    schedule = NoiseSchedule.linear(config.timesteps, config.beta_start, config.beta_end)
    schedule.validate()

    torch.manual_seed(substream_seed(config.seed, "gen-init"))
    model = GenModel(config, vocab)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    generator = torch.Generator().manual_seed(substream_seed(config.seed, "gen-noise"))
    mask_rng = rng_for(config.seed, "gen-mask")
    shuffle_rng = rng_for(config.seed, "gen-shuffle")

    by_len: dict[int, list[int]] = {}
    for i, g in enumerate(grids):
        by_len.setdefault(g.tokens.shape[0], []).append(i)
    batches = []
    for t_len in sorted(by_len):
        idxs = by_len[t_len]
        for s in range(0, len(idxs), config.batch_size):
            batches.append(idxs[s : s + config.batch_size])

    log: list[GenTrainLogEntry] = []
    model.train()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(batches))
        ep_loss, ep_steps, noisy_reads = 0.0, 0, 0
        for bi in order:
            idxs = batches[bi]
            tokens = torch.from_numpy(np.stack([grids[i].tokens for i in idxs])).float()
            credible = np.stack([grids[i].credible for i in idxs])
            alpha = float(mask_rng.uniform(config.alpha_min, config.alpha_max))
            plans = [
                make_mask_plan(credible[k], alpha, mask_rng, config.masking_law)
                for k in range(len(idxs))
            ]
            masked = torch.from_numpy(np.stack([p.masked for p in plans]))
            loss_mask = torch.from_numpy(np.stack([p.loss_mask for p in plans]))
            if not bool(loss_mask.any()):
                continue
            noisy_reads += int((loss_mask.numpy() & ~credible).sum())
            text = torch.stack([model.embed_prompt(grids[i].prompt) for i in idxs])
            zhat = model(tokens, masked, text)
            if config.head == "diffusion":
                loss = diffusion_loss(
                    tokens, zhat, loss_mask, model, schedule, generator, config.t_samples
                )
            else:
                loss = regression_loss(tokens, zhat, loss_mask, model)
            if not torch.isfinite(loss):
                raise DivergenceError(f"generator loss became non-finite at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            ep_loss += float(loss.detach())
            ep_steps += 1
        log.append(
            GenTrainLogEntry(
                epoch=epoch,
                loss=ep_loss / max(ep_steps, 1),
                noisy_cells_in_loss=noisy_reads,
            )
        )
    model.eval()
    return model, log


def sample_grid_tokens(
    bundle: GenBundle,
    prompts: list[str],
    n_frames: int,
    seed: int,
    decode_steps: int | None = None,
    ddpm_steps: int | None = None,
) -> np.ndarray:
    """Iteratively unmask a full grid for each prompt; (B, T, P, d) normalized.

    Cells are revealed in a random order under the cosine count schedule,
    each filled by ancestral sampling conditioned on the current context.
    """
    config = bundle.config
    steps = config.decode_steps if decode_steps is None else decode_steps
    if steps < 1:
        raise ValueError("decode_steps must be >= 1")
    model = bundle.model
    b = len(prompts)
    t_len, p = n_frames, config.num_parts
    total = t_len * p
    counts = cosine_unmask_counts(total, steps)

    rng = rng_for(seed, "unmask-order")
    torch_gen = torch.Generator().manual_seed(substream_seed(seed, "gen-sample"))
    orders = np.stack([rng.permutation(total) for _ in range(b)])

    tokens = torch.zeros((b, t_len, p, config.latent_dim))
    masked = torch.ones((b, t_len, p), dtype=torch.bool)
    with torch.no_grad():
        text = torch.stack([model.embed_prompt(pr) for pr in prompts])
        done = 0
        for count in counts:
            if count == 0:
                continue
            zhat = model(tokens, masked, text)
            flat_cond = zhat.reshape(b, total, -1)
            cells = orders[:, done : done + count]
            cond = torch.stack([flat_cond[k, cells[k]] for k in range(b)]).reshape(
                b * count, -1
            )
            if config.head == "diffusion":
                z = ddpm_sample(
                    cond,
                    bundle.schedule,
                    model,
                    torch_gen,
                    config.ddpm_steps if ddpm_steps is None else ddpm_steps,
                )
            else:
                z = model.regression_head(cond)
            z = z.reshape(b, count, -1)
            flat_tokens = tokens.reshape(b, total, -1)
            flat_masked = masked.reshape(b, total)
            for k in range(b):
                flat_tokens[k, cells[k]] = z[k]
                flat_masked[k, cells[k]] = False
            done += count
    return tokens.numpy().astype(float)


def sample_motion(
    prompt: str,
    length: int,
    bundle: GenBundle,
    vae: PVAEBundle,
    seed: int,
    decode_steps: int | None = None,
    ddpm_steps: int | None = None,
    skeleton: SkeletonSpec | None = None,
    partition: PartPartition | None = None,
    fps: float = 20.0,
    record_id: str | None = None,
) -> MotionRecord:
    """Generate a motion record for a prompt (all confidences 1)."""
    records = sample_motions(
        [prompt], length, bundle, vae, seed, decode_steps, ddpm_steps,
        skeleton, partition, fps,
    )
    record = records[0]
    if record_id is not None:
        record.id = record_id
    return record


def sample_motions(
    prompts: list[str],
    length: int,
    bundle: GenBundle,
    vae: PVAEBundle,
    seed: int,
    decode_steps: int | None = None,
    ddpm_steps: int | None = None,
    skeleton: SkeletonSpec | None = None,
    partition: PartPartition | None = None,
    fps: float = 20.0,
) -> list[MotionRecord]:
    """Batched generation with one shared rng stream (deterministic per seed)."""
    if skeleton is None or partition is None:
        skeleton, partition = build_default_skeleton()
    if length < 2:
        raise ValueError("length must be >= 2")
    f = vae.config.downsample
    grid_frames = max(1, length // f)
    grids = sample_grid_tokens(bundle, prompts, grid_frames, seed, decode_steps, ddpm_steps)
    grids = grids * bundle.token_std + bundle.token_mean

    records = []
    rest_root = skeleton.rest_positions()[0]
    for k, prompt in enumerate(prompts):
        seqs = [pvae_decode(grids[k, :, pid], pid, vae) for pid in range(vae.num_parts)]
        if vae.num_parts == 1:
            positions = decode_fullbody(seqs[0], skeleton, (rest_root, 0.0))
        else:
            positions = decode_features(seqs, skeleton, partition, (rest_root, 0.0))
        n = positions.shape[0]
        records.append(
            MotionRecord(
                id=f"gen-{substream_seed(seed, prompt, k) % 10**8:08d}",
                prompt=prompt,
                fps=fps,
                positions=positions,
                confidences=np.ones((n, skeleton.num_joints)),
            )
        )
    return records
