"""Contrastive text-motion dual encoder used as the metric feature space.

Motion branch: conv stack over whole-body feature frames, mean-pooled to a
unit-normalized embedding. Text branch: bag of learned token embeddings
through a small MLP, also unit-normalized. Trained with a symmetric
in-batch contrastive objective (both softmax directions, learnable
temperature) on prompt-labeled clean motions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, params_checksum, save_checkpoint
from .exceptions import DivergenceError
from .features import MotionRecord, encode_fullbody
from .seeding import rng_for, substream_seed
from .skeleton import SkeletonSpec, build_default_skeleton

STD_FLOOR = 1e-3


@dataclass
class EvalConfig:
    embed_dim: int = 32
    motion_hidden: int = 96
    text_dim: int = 32
    text_hidden: int = 64
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    val_fraction: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


class DualEncoder(nn.Module):
    def __init__(self, config: EvalConfig, feat_dim: int, vocab: dict[str, int]):
        super().__init__()
        self.config = config
        self.vocab = dict(vocab)
        h = config.motion_hidden
        self.motion_net = nn.Sequential(
            nn.Conv1d(feat_dim, h, 4, stride=2, padding=1),
            nn.GELU(),
            nn.Conv1d(h, h, 4, stride=2, padding=1),
            nn.GELU(),
            nn.Conv1d(h, h, 3, padding=1),
            nn.GELU(),
        )
        self.motion_head = nn.Linear(h, config.embed_dim)
        self.text_embedding = nn.Embedding(len(vocab), config.text_dim)
        self.text_net = nn.Sequential(
            nn.Linear(config.text_dim, config.text_hidden),
            nn.GELU(),
            nn.Linear(config.text_hidden, config.embed_dim),
        )
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1.0 / 0.07)))

    def encode_motion(self, feats: torch.Tensor) -> torch.Tensor:
        """(B, T, F) normalized features -> (B, e) unit vectors."""
        h = self.motion_net(feats.transpose(1, 2)).mean(dim=-1)
        emb = self.motion_head(h)
        return emb / emb.norm(dim=-1, keepdim=True).clamp(min=1e-8)

    def encode_text(self, prompts: list[str]) -> torch.Tensor:
        embs = []
        for prompt in prompts:
            tokens = prompt.split()
            if not tokens:
                raise ValueError("empty prompt")
            ids = torch.tensor([self.vocab.get(tok, 0) for tok in tokens])
            embs.append(self.text_embedding(ids).mean(dim=0))
        emb = self.text_net(torch.stack(embs))
        return emb / emb.norm(dim=-1, keepdim=True).clamp(min=1e-8)


@dataclass
class EvaluatorBundle:
    model: DualEncoder
    config: EvalConfig
    feat_mean: np.ndarray
    feat_std: np.ndarray

    def checksum(self) -> str:
        return params_checksum(
            {k: v.detach().numpy() for k, v in self.model.state_dict().items()}
        )

    def save(self, path) -> None:
        arrays = {
            f"param.{k}": v.detach().numpy() for k, v in self.model.state_dict().items()
        }
        arrays["feat_mean"] = self.feat_mean
        arrays["feat_std"] = self.feat_std
        sidecar = {
            "kind": "evaluator",
            "config": asdict(self.config),
            "vocab": self.model.vocab,
            "feat_dim": int(self.feat_mean.shape[0]),
        }
        save_checkpoint(path, arrays, sidecar)


def load_evaluator(path) -> EvaluatorBundle:
    arrays, sidecar = load_checkpoint(path)
    if sidecar.get("kind") != "evaluator":
        raise ValueError(f"{path} is not an evaluator checkpoint")
    config = EvalConfig(**sidecar["config"])
    model = DualEncoder(config, sidecar["feat_dim"], sidecar["vocab"])
    model.load_state_dict(
        {
            k[len("param."):]: torch.from_numpy(v)
            for k, v in arrays.items()
            if k.startswith("param.")
        }
    )
    model.eval()
    return EvaluatorBundle(
        model=model,
        config=config,
        feat_mean=arrays["feat_mean"],
        feat_std=arrays["feat_std"],
    )


def _motion_features(record: MotionRecord, skeleton: SkeletonSpec) -> np.ndarray:
    return encode_fullbody(record, skeleton).frames


def encode_motion_records(
    bundle: EvaluatorBundle,
    records: list[MotionRecord],
    skeleton: SkeletonSpec | None = None,
) -> np.ndarray:
    if skeleton is None:
        skeleton, _ = build_default_skeleton()
    out = []
    with torch.no_grad():
        for record in records:
            feats = _motion_features(record, skeleton)
            feats = (feats - bundle.feat_mean) / bundle.feat_std
            emb = bundle.model.encode_motion(torch.from_numpy(feats[None]).float())
            out.append(emb[0].numpy().astype(float))
    return np.stack(out)


def encode_prompts(bundle: EvaluatorBundle, prompts: list[str]) -> np.ndarray:
    with torch.no_grad():
        return bundle.model.encode_text(list(prompts)).numpy().astype(float)


def train_evaluator(
    records: list[MotionRecord],
    config: EvalConfig,
    vocab: dict[str, int],
    skeleton: SkeletonSpec | None = None,
) -> tuple[EvaluatorBundle, dict]:
    """Symmetric contrastive training over unique-prompt batches.

    Returns the trained bundle and its held-out retrieval accuracy.
    """
    from .metrics import r_precision  # local import keeps metrics torch-free

    config.validate()
    if skeleton is None:
        skeleton, _ = build_default_skeleton()
    if not records:
        raise ValueError("empty corpus")

    feats_all = [_motion_features(r, skeleton) for r in records]
    feat_dim = feats_all[0].shape[1]
    split_rng = rng_for(config.seed, "eval-split")
    order = split_rng.permutation(len(records))
    n_val = max(0, int(round(config.val_fraction * len(records))))
    val_idx = sorted(order[:n_val].tolist())
    train_idx = [i for i in order[n_val:].tolist()]

    stack = np.concatenate([feats_all[i] for i in train_idx], axis=0)
    feat_mean = stack.mean(axis=0)
    feat_std = np.maximum(stack.std(axis=0), STD_FLOOR)

    torch.manual_seed(substream_seed(config.seed, "eval-init"))
    model = DualEncoder(config, feat_dim, vocab)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    batch_rng = rng_for(config.seed, "eval-batches")

    by_prompt: dict[str, list[int]] = {}
    for i in train_idx:
        by_prompt.setdefault(records[i].prompt, []).append(i)
    prompts_list = sorted(by_prompt)
    if len(prompts_list) < config.batch_size:
        raise ValueError(
            f"need at least {config.batch_size} distinct prompts, got {len(prompts_list)}"
        )

    def make_batches() -> list[list[int]]:
        perm = batch_rng.permutation(len(prompts_list))
        batches = []
        for s in range(0, len(perm) - config.batch_size + 1, config.batch_size):
            chosen = [prompts_list[k] for k in perm[s : s + config.batch_size]]
            batches.append(
                [by_prompt[p][batch_rng.integers(len(by_prompt[p]))] for p in chosen]
            )
        return batches

    model.train()
    for epoch in range(config.epochs):
        for batch in make_batches():
            t_min = min(feats_all[i].shape[0] for i in batch)
            feats = torch.from_numpy(
                np.stack(
                    [(feats_all[i][:t_min] - feat_mean) / feat_std for i in batch]
                )
            ).float()
            motion_emb = model.encode_motion(feats)
            text_emb = model.encode_text([records[i].prompt for i in batch])
            scale = model.logit_scale.exp().clamp(max=100.0)
            logits = scale * motion_emb @ text_emb.T
            labels = torch.arange(len(batch))
            loss = 0.5 * (
                nn.functional.cross_entropy(logits, labels)
                + nn.functional.cross_entropy(logits.T, labels)
            )
            if not torch.isfinite(loss):
                raise DivergenceError(f"evaluator loss became non-finite at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    model.eval()

    bundle = EvaluatorBundle(
        model=model, config=config, feat_mean=feat_mean, feat_std=feat_std
    )
    heldout: dict = {"num_heldout": len(val_idx)}
    if len(val_idx) >= config.batch_size:
        val_records = [records[i] for i in val_idx]
        m = encode_motion_records(bundle, val_records, skeleton)
        t = encode_prompts(bundle, [r.prompt for r in val_records])
        heldout.update(
            r_precision(
                m, t, config.batch_size, rng_for(config.seed, "eval-heldout"), rounds=4
            )
        )
    return bundle, heldout
