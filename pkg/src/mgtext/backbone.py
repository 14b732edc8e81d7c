"""Vision-transformer encoder: patch embedding with class token and learned
position embeddings, followed by pre-norm residual blocks."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from . import nncore as nc
from .errors import ConfigError, ShapeError
from .nncore import Tensor

GRANULARITIES = ("char", "bpe", "wp")

# desk-scale default subword vocab sizes: 3 specials + 36 chars + 256 merges,
# and 512 total wordpiece units
DEFAULT_K_BPE = 295
DEFAULT_K_WP = 512

_PRESETS = {
    # name: (dim, depth, heads)
    "base": (768, 12, 12),
    "small": (384, 12, 6),
    "tiny": (192, 12, 3),
    "micro": (96, 4, 3),
}


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters."""

    dim: int
    depth: int
    heads: int
    preset: str = "custom"
    img_h: int = 32
    img_w: int = 128
    channels: int = 3
    patch: int = 4
    max_len: int = 27  # output slots, eos included
    k_char: int = 38
    k_bpe: int = DEFAULT_K_BPE
    k_wp: int = DEFAULT_K_WP

    def __post_init__(self):
        if self.img_h % self.patch or self.img_w % self.patch:
            raise ConfigError(
                f"image {self.img_h}x{self.img_w} not divisible by patch {self.patch}"
            )
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by {self.heads} heads")
        for f_ in ("dim", "depth", "heads", "max_len", "k_char", "k_bpe", "k_wp"):
            if getattr(self, f_) <= 0 and f_ != "depth":
                raise ConfigError(f"{f_} must be positive")
        if self.depth < 0:
            raise ConfigError("depth must be non-negative")

    @property
    def grid(self) -> tuple[int, int]:
        return self.img_h // self.patch, self.img_w // self.patch

    @property
    def n_patches(self) -> int:
        r, c = self.grid
        return r * c

    @property
    def tokens(self) -> int:
        return self.n_patches + 1  # class token at row 0

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def k_of(self, granularity: str) -> int:
        return {"char": self.k_char, "bpe": self.k_bpe, "wp": self.k_wp}[granularity]

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        if name not in _PRESETS:
            raise ConfigError(f"unknown preset {name!r} (have {sorted(_PRESETS)})")
        dim, depth, heads = _PRESETS[name]
        cfg = cls(dim=dim, depth=depth, heads=heads, preset=name)
        return replace(cfg, **overrides) if overrides else cfg

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "dim": self.dim,
            "depth": self.depth,
            "heads": self.heads,
            "img_h": self.img_h,
            "img_w": self.img_w,
            "channels": self.channels,
            "patch": self.patch,
            "max_len": self.max_len,
            "k_char": self.k_char,
            "k_bpe": self.k_bpe,
            "k_wp": self.k_wp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, C) -> (N, P*P*C): row-major patch order, channel-last flattening.

    Also accepts a leading batch axis.
    """
    image = np.asarray(image)
    batched = image.ndim == 4
    if not batched:
        image = image[None]
    b, h, w, c = image.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} not divisible by patch {patch}")
    gr, gc = h // patch, w // patch
    out = (
        image.reshape(b, gr, patch, gc, patch, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, gr * gc, patch * patch * c)
    )
    return out if batched else out[0]


def unpatchify(patches: np.ndarray, img_h: int, img_w: int, channels: int, patch: int) -> np.ndarray:
    """Exact inverse of :func:`patchify`."""
    patches = np.asarray(patches)
    gr, gc = img_h // patch, img_w // patch
    return (
        patches.reshape(gr, gc, patch, patch, channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(img_h, img_w, channels)
    )


@dataclass
class PatchEmbedder:
    """Linear patch projection plus class token and position embeddings."""

    proj_w: Tensor  # (P*P*C, D)
    proj_b: Tensor  # (D,)
    pos: Tensor  # (N+1, D)
    cls: Tensor  # (1, D)

    @classmethod
    def init(cls, config: ModelConfig, seed: int, prefix: str = "backbone.embed") -> "PatchEmbedder":
        def tn(name, shape):
            rng = nc.seeded_rng(seed, f"{prefix}.{name}")
            return Tensor(nc.trunc_normal(rng, shape), requires_grad=True)

        return cls(
            proj_w=tn("proj_w", (config.patch_dim, config.dim)),
            proj_b=Tensor(np.zeros(config.dim, np.float32), requires_grad=True),
            pos=tn("pos", (config.tokens, config.dim)),
            cls=tn("cls", (1, config.dim)),
        )

    def named(self, prefix: str = "backbone.embed") -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.cls", self.cls
        yield f"{prefix}.pos", self.pos
        yield f"{prefix}.proj_b", self.proj_b
        yield f"{prefix}.proj_w", self.proj_w

    def __call__(self, images: np.ndarray, patch: int) -> Tensor:
        """images (H,W,C) or (B,H,W,C) -> embedded tokens (.., N+1, D)."""
        batched = np.asarray(images).ndim == 4
        xp = patchify(images, patch).astype(self.proj_w.dtype)
        if xp.shape[-1] != self.proj_w.shape[0]:
            raise ShapeError(
                f"patch dim {xp.shape[-1]} does not match projection {self.proj_w.shape}"
            )
        emb = nc.add(nc.matmul(Tensor(xp), self.proj_w), self.proj_b)
        if batched:
            b = xp.shape[0]
            cls_rows = nc.reshape(self.cls, (1, 1, self.cls.shape[1]))
            cls_rows = nc.add(cls_rows, Tensor(np.zeros((b, 1, 1), self.cls.dtype)))
            z0 = nc.concat([cls_rows, emb], axis=1)
        else:
            z0 = nc.concat([self.cls, emb], axis=0)
        return nc.add(z0, self.pos)


@dataclass
class EncoderBlock:
    """Pre-norm residual transformer block (attention, then 4x MLP)."""

    ln1_g: Tensor
    ln1_b: Tensor
    attn: nc.AttentionParams
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor  # (D, 4D)
    mlp_b1: Tensor
    mlp_w2: Tensor  # (4D, D)
    mlp_b2: Tensor

    @classmethod
    def init(cls, config: ModelConfig, seed: int, prefix: str) -> "EncoderBlock":
        d = config.dim

        def tn(name, shape):
            rng = nc.seeded_rng(seed, f"{prefix}.{name}")
            return Tensor(nc.trunc_normal(rng, shape), requires_grad=True)

        def zeros(n):
            return Tensor(np.zeros(n, np.float32), requires_grad=True)

        def ones(n):
            return Tensor(np.ones(n, np.float32), requires_grad=True)

        attn = nc.AttentionParams(
            heads=config.heads,
            wq=tn("attn.wq", (d, d)), bq=zeros(d),
            wk=tn("attn.wk", (d, d)), bk=zeros(d),
            wv=tn("attn.wv", (d, d)), bv=zeros(d),
            wo=tn("attn.wo", (d, d)), bo=zeros(d),
        )
        return cls(
            ln1_g=ones(d), ln1_b=zeros(d),
            attn=attn,
            ln2_g=ones(d), ln2_b=zeros(d),
            mlp_w1=tn("mlp.w1", (d, 4 * d)), mlp_b1=zeros(4 * d),
            mlp_w2=tn("mlp.w2", (4 * d, d)), mlp_b2=zeros(d),
        )

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.ln1.g", self.ln1_g
        yield f"{prefix}.ln1.b", self.ln1_b
        yield from self.attn.named(f"{prefix}.attn")
        yield f"{prefix}.ln2.g", self.ln2_g
        yield f"{prefix}.ln2.b", self.ln2_b
        yield f"{prefix}.mlp.w1", self.mlp_w1
        yield f"{prefix}.mlp.b1", self.mlp_b1
        yield f"{prefix}.mlp.w2", self.mlp_w2
        yield f"{prefix}.mlp.b2", self.mlp_b2

    def __call__(self, z: Tensor) -> Tensor:
        a = nc.multi_head_self_attention(nc.layer_norm(z, self.ln1_g, self.ln1_b), self.attn)
        z = nc.add(a, z)
        h = nc.matmul(nc.layer_norm(z, self.ln2_g, self.ln2_b), self.mlp_w1)
        h = nc.gelu(nc.add(h, self.mlp_b1))
        m = nc.add(nc.matmul(h, self.mlp_w2), self.mlp_b2)
        return nc.add(m, z)


class Backbone:
    """Patch embedder plus ``depth`` encoder blocks producing the token map."""

    def __init__(self, config: ModelConfig, embedder: PatchEmbedder, blocks: list[EncoderBlock]):
        self.config = config
        self.embedder = embedder
        self.blocks = blocks

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "Backbone":
        embedder = PatchEmbedder.init(config, seed)
        blocks = [
            EncoderBlock.init(config, seed, f"backbone.block{i:02d}")
            for i in range(config.depth)
        ]
        return cls(config, embedder, blocks)

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.embedder.named()
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"backbone.block{i:02d}")

    def encode(self, z0: Tensor) -> Tensor:
        z = z0
        for blk in self.blocks:
            z = blk(z)
        return z

    def __call__(self, images: np.ndarray) -> Tensor:
        return self.encode(self.embedder(images, self.config.patch))


def backbone_param_count(config: ModelConfig) -> int:
    """Closed-form parameter total for the embedder and encoder blocks."""
    d, pd, n1 = config.dim, config.patch_dim, config.tokens
    embed = pd * d + d + n1 * d + d  # projection+bias, positions, class token
    per_block = (
        2 * d  # ln1
        + 4 * (d * d + d)  # qkv + output projections
        + 2 * d  # ln2
        + (d * 4 * d + 4 * d) + (4 * d * d + d)  # mlp
    )
    return embed + config.depth * per_block
