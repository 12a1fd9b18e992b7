"""Part-aware variational autoencoder over the per-part feature tuples.

One encoder/decoder parameter set serves all five parts; the only
part-specific weights are an embedding table whose vector is concatenated
to every input frame. Parts have different feature widths, so frames are
zero-padded into a section-aligned layout (root block, positions,
velocities, rotations each padded to the widest part) before entering the
shared convolutions.

Training sees only credible (frame, part) cells: noisy cells are zeroed at
the encoder input and carry zero weight in the reconstruction and KL
terms, which makes the loss exactly independent of their content.
"""

from __future__ import annotations

import copy
import io
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .credibility import DEFAULT_TAU, record_credibility
from .exceptions import DivergenceError
from .features import (
    MotionRecord,
    PartFeatureSequence,
    decode_features,
    decode_fullbody,
    encode_features,
    encode_fullbody,
    root_init_of,
)
from .seeding import rng_for, substream_seed
from .skeleton import PartPartition, SkeletonSpec, build_default_skeleton

LOGVAR_RANGE = 8.0
STD_FLOOR = 1e-3


@dataclass
class PVAEConfig:
    latent_dim: int = 16
    hidden: int = 128
    part_embed_dim: int = 8
    downsample: int = 1
    kl_weight: float = 1e-2
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    val_fraction: float = 0.1
    tau: float = DEFAULT_TAU
    root_gain: float = 3.0
    lr_schedule: str = "cosine"  # constant | cosine
    variant: str = "shared"  # shared | per_part | fullbody
    ignore_credibility: bool = False  # baseline: treat every cell as credible
    seed: int = 0

    def validate(self) -> None:
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if self.downsample not in (1, 2, 4):
            raise ValueError("downsample must be one of 1, 2, 4")
        if self.variant not in ("shared", "per_part", "fullbody"):
            raise ValueError(f"unknown variant {self.variant!r}")


# ---------------------------------------------------------------------------
# Feature layout: section-aligned zero padding to the widest part


def padded_dim(max_joints: int) -> int:
    return 3 + 12 * max_joints


def pad_frames(frames: np.ndarray, n_joints: int, max_joints: int) -> np.ndarray:
    """(T, 3+12n) -> (T, 3+12M) with each section padded independently."""
    t = frames.shape[0]
    out = np.zeros((t, padded_dim(max_joints)), dtype=frames.dtype)
    out[:, :3] = frames[:, :3]
    src, dst = 3, 3
    for width, slot in ((3, 3), (3, 3), (6, 6)):
        out[:, dst : dst + width * n_joints] = frames[:, src : src + width * n_joints]
        src += width * n_joints
        dst += slot * max_joints
    return out


def unpad_frames(frames: np.ndarray, n_joints: int, max_joints: int) -> np.ndarray:
    t = frames.shape[0]
    out = np.empty((t, 3 + 12 * n_joints), dtype=frames.dtype)
    out[:, :3] = frames[:, :3]
    src, dst = 3, 3
    for width, slot in ((3, 3), (3, 3), (6, 6)):
        out[:, dst : dst + width * n_joints] = frames[:, src : src + width * n_joints]
        src += slot * max_joints
        dst += width * n_joints
    return out


def dim_weights(part_joint_counts: list[int], max_joints: int) -> np.ndarray:
    """(P, F_padded) 0/1 weights marking each part's real dimensions."""
    p = len(part_joint_counts)
    out = np.zeros((p, padded_dim(max_joints)))
    for pid, nj in enumerate(part_joint_counts):
        out[pid] = pad_frames(np.ones((1, 3 + 12 * nj)), nj, max_joints)[0]
    return out


@dataclass
class FeatureScaler:
    mean: np.ndarray  # (P, F_padded)
    std: np.ndarray   # (P, F_padded)

    @classmethod
    def fit(
        cls,
        feats: np.ndarray,
        credible: np.ndarray,
        weights: np.ndarray,
        max_joints: int,
        root_gain: float = 1.0,
    ) -> "FeatureScaler":
        """Per-part statistics over credible frames only; padded dims stay
        identity-scaled.

        ``root_gain`` shrinks the scale of the root-velocity dimensions
        (planar, yaw, and the root joint's velocity slot), inflating them in
        normalized space: decoding integrates these over the whole clip, so
        their errors compound and deserve extra reconstruction weight.
        """
        p = feats.shape[1]
        mean = np.zeros((p, feats.shape[-1]))
        std = np.ones((p, feats.shape[-1]))
        for pid in range(p):
            rows = feats[:, pid][credible[:, pid]]
            if len(rows):
                mean[pid] = rows.mean(axis=0) * weights[pid]
                std[pid] = np.maximum(rows.std(axis=0), STD_FLOOR) * weights[pid] + (
                    1.0 - weights[pid]
                )
        if root_gain != 1.0:
            jv_root = 3 + 3 * max_joints
            std[:, 0:3] /= root_gain
            std[:, jv_root : jv_root + 3] /= root_gain
        return cls(mean=mean, std=std)

    def normalize(self, frames: np.ndarray, part_id: int) -> np.ndarray:
        return (frames - self.mean[part_id]) / self.std[part_id]

    def denormalize(self, frames: np.ndarray, part_id: int) -> np.ndarray:
        return frames * self.std[part_id] + self.mean[part_id]


# ---------------------------------------------------------------------------
# Model


def _encoder_stack(in_dim: int, hidden: int, f: int) -> nn.Sequential:
    s1, s2 = (2, 2) if f == 4 else (f, 1)
    def conv(i, o, s):
        return nn.Conv1d(i, o, 4 if s == 2 else 3, stride=s, padding=1)
    return nn.Sequential(conv(in_dim, hidden, s1), nn.GELU(), conv(hidden, hidden, s2), nn.GELU())


def _decoder_stack(in_dim: int, hidden: int, out_dim: int, f: int) -> nn.Sequential:
    s1, s2 = (2, 2) if f == 4 else (1, f)
    def up(i, o, s):
        if s == 2:
            return nn.ConvTranspose1d(i, o, 4, stride=2, padding=1)
        return nn.Conv1d(i, o, 3, stride=1, padding=1)
    return nn.Sequential(
        up(in_dim, hidden, s1), nn.GELU(), up(hidden, hidden, s2), nn.GELU(),
        nn.Conv1d(hidden, out_dim, 3, padding=1),
    )


class PVAE(nn.Module):
    """Shared-parameter per-part VAE; ``per_part`` swaps in separate stacks."""

    def __init__(self, config: PVAEConfig, num_parts: int, feat_dim: int):
        super().__init__()
        self.config = config
        self.num_parts = num_parts
        self.feat_dim = feat_dim
        self.shared = config.variant != "per_part"
        emb = config.part_embed_dim if self.shared else 0
        if self.shared:
            self.part_embedding = nn.Embedding(num_parts, emb)
            self.encoder = _encoder_stack(feat_dim + emb, config.hidden, config.downsample)
            self.enc_head = nn.Conv1d(config.hidden, 2 * config.latent_dim, 3, padding=1)
            self.decoder = _decoder_stack(
                config.latent_dim + emb, config.hidden, feat_dim, config.downsample
            )
        else:
            self.encoders = nn.ModuleList(
                _encoder_stack(feat_dim, config.hidden, config.downsample)
                for _ in range(num_parts)
            )
            self.enc_heads = nn.ModuleList(
                nn.Conv1d(config.hidden, 2 * config.latent_dim, 3, padding=1)
                for _ in range(num_parts)
            )
            self.decoders = nn.ModuleList(
                _decoder_stack(config.latent_dim, config.hidden, feat_dim, config.downsample)
                for _ in range(num_parts)
            )

    def encode_raw(self, x: torch.Tensor, part_ids: torch.Tensor):
        """x: (B, T, F) normalized; returns mu, logvar (B, T', d)."""
        if self.shared:
            emb = self.part_embedding(part_ids)[:, None, :].expand(-1, x.shape[1], -1)
            h = self.encoder(torch.cat([x, emb], dim=-1).transpose(1, 2))
            out = self.enc_head(h).transpose(1, 2)
        else:
            outs = []
            for i in range(x.shape[0]):
                pid = int(part_ids[i])
                h = self.encoders[pid](x[i : i + 1].transpose(1, 2))
                outs.append(self.enc_heads[pid](h).transpose(1, 2))
            out = torch.cat(outs, dim=0)
        mu, logvar = out.chunk(2, dim=-1)
        return mu, logvar.clamp(-LOGVAR_RANGE, LOGVAR_RANGE)

    def decode_raw(self, z: torch.Tensor, part_ids: torch.Tensor) -> torch.Tensor:
        """z: (B, T', d); returns (B, T' * f, F) normalized features."""
        if self.shared:
            emb = self.part_embedding(part_ids)[:, None, :].expand(-1, z.shape[1], -1)
            return self.decoder(torch.cat([z, emb], dim=-1).transpose(1, 2)).transpose(1, 2)
        outs = []
        for i in range(z.shape[0]):
            pid = int(part_ids[i])
            outs.append(self.decoders[pid](z[i : i + 1].transpose(1, 2)).transpose(1, 2))
        return torch.cat(outs, dim=0)


@dataclass
class PVAEBundle:
    """Frozen model plus everything needed to use it on records."""

    model: PVAE
    config: PVAEConfig
    scaler: FeatureScaler
    part_names: tuple[str, ...]
    part_joints: tuple[tuple[int, ...], ...]
    max_joints: int

    @property
    def num_parts(self) -> int:
        return len(self.part_names)

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def weights(self) -> np.ndarray:
        return dim_weights([len(j) for j in self.part_joints], self.max_joints)

    def save(self, path) -> None:
        arrays = {
            f"param.{k}": v.detach().numpy() for k, v in self.model.state_dict().items()
        }
        arrays["scaler_mean"] = self.scaler.mean
        arrays["scaler_std"] = self.scaler.std
        sidecar = {
            "kind": "pvae",
            "config": asdict(self.config),
            "part_names": list(self.part_names),
            "part_joints": [list(j) for j in self.part_joints],
            "max_joints": self.max_joints,
        }
        save_checkpoint(path, arrays, sidecar)


def load_pvae(path) -> PVAEBundle:
    arrays, sidecar = load_checkpoint(path)
    if sidecar.get("kind") != "pvae":
        raise ValueError(f"{path} is not a P-VAE checkpoint")
    config = PVAEConfig(**sidecar["config"])
    part_joints = tuple(tuple(j) for j in sidecar["part_joints"])
    model = PVAE(config, len(part_joints), padded_dim(sidecar["max_joints"]))
    state = {
        k[len("param."):]: torch.from_numpy(v)
        for k, v in arrays.items()
        if k.startswith("param.")
    }
    model.load_state_dict(state)
    model.eval()
    return PVAEBundle(
        model=model,
        config=config,
        scaler=FeatureScaler(mean=arrays["scaler_mean"], std=arrays["scaler_std"]),
        part_names=tuple(sidecar["part_names"]),
        part_joints=part_joints,
        max_joints=sidecar["max_joints"],
    )


# ---------------------------------------------------------------------------
# Spec operations


def encode(
    features: PartFeatureSequence | np.ndarray,
    part_id: int,
    bundle: PVAEBundle,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic posterior parameters for one part sequence."""
    frames = features.frames if isinstance(features, PartFeatureSequence) else features
    if not np.isfinite(frames).all():
        raise ValueError("non-finite feature values")
    f = bundle.config.downsample
    if frames.shape[0] < f:
        raise ValueError(f"need at least {f} frames, got {frames.shape[0]}")
    n_joints = len(bundle.part_joints[part_id])
    padded = pad_frames(frames, n_joints, bundle.max_joints)
    x = torch.from_numpy(bundle.scaler.normalize(padded, part_id)[None]).float()
    with torch.no_grad():
        mu, logvar = bundle.model.encode_raw(x, torch.tensor([part_id]))
    return mu[0].numpy().astype(float), logvar[0].numpy().astype(float)


def reparameterize(mu: np.ndarray, logvar: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal(np.shape(mu))
    return mu + np.exp(0.5 * np.asarray(logvar)) * eps


def decode(z: np.ndarray, part_id: int, bundle: PVAEBundle) -> PartFeatureSequence:
    """Map latent tokens (T', d) back to an unpadded feature sequence."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != bundle.latent_dim:
        raise ValueError(f"latents must be (T', {bundle.latent_dim}), got {z.shape}")
    with torch.no_grad():
        out = bundle.model.decode_raw(
            torch.from_numpy(z[None]).float(), torch.tensor([part_id])
        )
    frames = bundle.scaler.denormalize(out[0].numpy().astype(float), part_id)
    n_joints = len(bundle.part_joints[part_id])
    return PartFeatureSequence(
        part_id=part_id,
        part_name=bundle.part_names[part_id],
        joints=bundle.part_joints[part_id],
        frames=unpad_frames(frames, n_joints, bundle.max_joints),
    )


def pvae_loss(
    model: PVAE,
    feats: torch.Tensor,      # (B, P, T, F) normalized
    credible: torch.Tensor,   # (B, P, T) bool
    dimw: torch.Tensor,       # (P, F) 0/1
    kl_weight: float,
    generator: torch.Generator | None = None,
):
    """Masked VAE objective; returns (loss, breakdown).

    Noisy cells are zeroed on the way in and weighted zero in both terms,
    so the loss value and every parameter gradient are exactly independent
    of their feature content.
    """
    b, p, t, fdim = feats.shape
    f = model.config.downsample
    cred_f = credible.float()
    x = feats * cred_f[..., None]

    flat = x.reshape(b * p, t, fdim)
    pids = torch.arange(p).repeat(b)
    mu, logvar = model.encode_raw(flat, pids)

    win_cred = credible.reshape(b * p, t // f, f).all(dim=-1)
    n_credible = int(win_cred.sum())
    if n_credible == 0:
        raise ValueError("no credible cells in batch")

    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    z = mu + torch.exp(0.5 * logvar) * eps
    xhat = model.decode_raw(z, pids)

    weight = dimw[pids][:, None, :] * cred_f.reshape(b * p, t)[..., None]
    sqerr = (xhat - flat) ** 2 * weight
    denom = (dimw.sum(dim=-1)[pids] * f).clamp(min=1.0)
    cell_mse = sqerr.reshape(b * p, t // f, -1).sum(dim=-1) / denom[:, None]
    recon = cell_mse[win_cred].mean()

    # Per-cell KL over latent dims, normalized by the same feature-dim count
    # as the reconstruction so the terms keep the classic sum-over-dims ratio.
    kl_cell = -0.5 * (1.0 + logvar - mu.pow(2) - logvar.exp()).sum(dim=-1) / denom[:, None]
    kl = kl_cell[win_cred].mean()

    loss = recon + kl_weight * kl
    return loss, {
        "recon": float(recon.detach()),
        "kl": float(kl.detach()),
        "n_credible": n_credible,
    }


# ---------------------------------------------------------------------------
# Data preparation and training


def record_part_tensor(
    record: MotionRecord,
    skeleton: SkeletonSpec,
    partition: PartPartition,
    max_joints: int,
    tau: float,
    variant: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Padded per-part features (P, T, F) and feature-frame credibility (P, T).

    A feature frame spans two position frames, so it is credible only when
    both are.
    """
    if variant == "fullbody":
        seqs = [encode_fullbody(record, skeleton)]
    else:
        seqs = encode_features(record, skeleton, partition)
    frame_cred = record_credibility(record, partition, tau).credible
    cell_cred = frame_cred[:-1] & frame_cred[1:]
    if variant == "fullbody":
        cell_cred = cell_cred.all(axis=1, keepdims=True)

    feats = np.stack(
        [pad_frames(s.frames, len(s.joints), max_joints) for s in seqs], axis=0
    )
    return feats, cell_cred.T.copy()


@dataclass
class TrainLogEntry:
    epoch: int
    recon: float
    kl: float
    val_recon: float


def train_pvae(
    records: list[MotionRecord],
    config: PVAEConfig,
    skeleton: SkeletonSpec | None = None,
    partition: PartPartition | None = None,
) -> tuple[PVAEBundle, list[TrainLogEntry]]:
    """Deterministic credible-only training; returns the best-validation model."""
    config.validate()
    if skeleton is None or partition is None:
        skeleton, partition = build_default_skeleton()
    if not records:
        raise ValueError("empty corpus")

    if config.variant == "fullbody":
        part_names = ("fullbody",)
        part_joints = (tuple(range(skeleton.num_joints)),)
        max_joints = skeleton.num_joints
    else:
        part_names = partition.parts
        part_joints = tuple(partition.joints_of[p] for p in partition.parts)
        max_joints = max(len(j) for j in part_joints)

    f = config.downsample
    prepared = []
    for record in records:
        feats, cred = record_part_tensor(
            record, skeleton, partition, max_joints, config.tau, config.variant
        )
        if config.ignore_credibility:
            cred = np.ones_like(cred)
        t_use = (feats.shape[1] // f) * f
        if t_use >= f:
            prepared.append((feats[:, :t_use], cred[:, :t_use]))
    if not prepared:
        raise ValueError("no usable sequences after downsample trimming")

    rng = rng_for(config.seed, "pvae-split")
    order = rng.permutation(len(prepared))
    n_val = max(1, int(round(config.val_fraction * len(prepared)))) if len(prepared) > 1 else 0
    val_idx = set(order[:n_val].tolist())
    train_set = [prepared[i] for i in range(len(prepared)) if i not in val_idx]
    val_set = [prepared[i] for i in sorted(val_idx)]
    if not train_set:
        train_set, val_set = val_set, []

    all_cred = np.concatenate([c.T for _, c in train_set], axis=0)  # (sumT, P)
    all_feats = np.concatenate([fts.transpose(1, 0, 2) for fts, _ in train_set], axis=0)
    if not all_cred.any():
        raise ValueError("corpus has no credible cells")
    weights = dim_weights([len(j) for j in part_joints], max_joints)
    scaler = FeatureScaler.fit(all_feats, all_cred, weights, max_joints, config.root_gain)

    torch.manual_seed(substream_seed(config.seed, "pvae-init"))
    model = PVAE(config, len(part_names), padded_dim(max_joints))
    dimw = torch.from_numpy(weights).float()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    scheduler = None
    if config.lr_schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=config.epochs, eta_min=config.lr * 0.05
        )
    generator = torch.Generator().manual_seed(substream_seed(config.seed, "pvae-noise"))
    shuffle_rng = rng_for(config.seed, "pvae-shuffle")

    def to_tensors(items):
        by_len: dict[int, list[int]] = {}
        for i, (fts, _) in enumerate(items):
            by_len.setdefault(fts.shape[1], []).append(i)
        batches = []
        for t_len in sorted(by_len):
            idxs = by_len[t_len]
            for s in range(0, len(idxs), config.batch_size):
                chunk = idxs[s : s + config.batch_size]
                feats = torch.from_numpy(
                    np.stack(
                        [
                            np.stack(
                                [
                                    scaler.normalize(items[i][0][pid], pid)
                                    for pid in range(len(part_names))
                                ]
                            )
                            for i in chunk
                        ]
                    )
                ).float()
                cred = torch.from_numpy(np.stack([items[i][1] for i in chunk]))
                if cred.any():
                    batches.append((feats, cred))
        return batches

    train_batches = to_tensors(train_set)
    val_batches = to_tensors(val_set) if val_set else []

    def validation_recon() -> float:
        if not val_batches:
            return float("nan")
        model.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for feats, cred in val_batches:
                b, p, t, fdim = feats.shape
                x = feats * cred.float()[..., None]
                mu, _ = model.encode_raw(x.reshape(b * p, t, fdim), torch.arange(p).repeat(b))
                xhat = model.decode_raw(mu, torch.arange(p).repeat(b))
                w = dimw[torch.arange(p).repeat(b)][:, None, :] * cred.float().reshape(
                    b * p, t
                )[..., None]
                sq = ((xhat - x.reshape(b * p, t, fdim)) ** 2 * w).sum()
                total += float(sq)
                count += int((w > 0).sum())
        model.train()
        return total / max(count, 1)

    log: list[TrainLogEntry] = []
    best_val = float("inf")
    best_state = copy.deepcopy(model.state_dict())
    model.train()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_batches))
        ep_recon, ep_kl, n_batches = 0.0, 0.0, 0
        for bi in order:
            feats, cred = train_batches[bi]
            loss, parts = pvae_loss(model, feats, cred, dimw, config.kl_weight, generator)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"P-VAE loss became non-finite at epoch {epoch} "
                    f"(recon={parts['recon']}, kl={parts['kl']})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            ep_recon += parts["recon"]
            ep_kl += parts["kl"]
            n_batches += 1
        if scheduler is not None:
            scheduler.step()
        val = validation_recon()
        log.append(
            TrainLogEntry(
                epoch=epoch,
                recon=ep_recon / max(n_batches, 1),
                kl=ep_kl / max(n_batches, 1),
                val_recon=val,
            )
        )
        if val_batches and val < best_val:
            best_val = val
            best_state = copy.deepcopy(model.state_dict())

    if val_batches:
        model.load_state_dict(best_state)
    model.eval()
    bundle = PVAEBundle(
        model=model,
        config=config,
        scaler=scaler,
        part_names=part_names,
        part_joints=part_joints,
        max_joints=max_joints,
    )
    return bundle, log


# ---------------------------------------------------------------------------
# Reconstruction helpers (round-trip evaluation)


def encode_record_tokens(
    record: MotionRecord,
    bundle: PVAEBundle,
    skeleton: SkeletonSpec,
    partition: PartPartition,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means per cell: tokens (T', P, d) plus cell credibility (T', P).

    Noisy frames are zeroed on input exactly as during training.
    """
    variant = "fullbody" if bundle.num_parts == 1 else "shared"
    feats, cred = record_part_tensor(
        record, skeleton, partition, bundle.max_joints, bundle.config.tau, variant
    )
    if bundle.config.ignore_credibility:
        cred = np.ones_like(cred)
    f = bundle.config.downsample
    t_use = (feats.shape[1] // f) * f
    feats, cred = feats[:, :t_use], cred[:, :t_use]
    p = feats.shape[0]
    x = np.stack([bundle.scaler.normalize(feats[pid], pid) for pid in range(p)])
    x = x * cred[..., None]
    with torch.no_grad():
        mu, _ = bundle.model.encode_raw(torch.from_numpy(x).float(), torch.arange(p))
    win_cred = cred.reshape(p, t_use // f, f).all(axis=-1)
    return mu.numpy().astype(float).transpose(1, 0, 2), win_cred.T.copy()


def reconstruct_positions(
    record: MotionRecord,
    bundle: PVAEBundle,
    skeleton: SkeletonSpec,
    partition: PartPartition,
) -> tuple[np.ndarray, np.ndarray]:
    """Round-trip a record through the frozen model; (positions, cell credibility)."""
    tokens, win_cred = encode_record_tokens(record, bundle, skeleton, partition)
    seqs = [decode(tokens[:, pid], pid, bundle) for pid in range(bundle.num_parts)]
    init = root_init_of(record, skeleton)
    if bundle.num_parts == 1:
        positions = decode_fullbody(seqs[0], skeleton, init)
    else:
        positions = decode_features(seqs, skeleton, partition, init)
    return positions, win_cred


def masked_mpjpe(
    pred: np.ndarray,
    target: np.ndarray,
    cell_credible: np.ndarray,
    part_joints: tuple[tuple[int, ...], ...],
) -> float:
    """Mean joint error over credible (frame, part) cells, full joint sets."""
    total, count = 0.0, 0
    for pid, joints in enumerate(part_joints):
        rows = cell_credible[: pred.shape[0], pid]
        if rows.any():
            err = np.linalg.norm(
                pred[rows][:, list(joints)] - target[: pred.shape[0]][rows][:, list(joints)],
                axis=-1,
            )
            total += float(err.sum())
            count += err.size
    if count == 0:
        raise ValueError("no credible cells to evaluate")
    return total / count
