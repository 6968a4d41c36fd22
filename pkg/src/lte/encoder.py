"""Scene encoder: nearest-neighbour embedding followed by serialized patch attention.

The geometric part (canonical sort, FPS anchors, neighbour lists, Z-order and
patch layout) depends only on point positions and is computed once per cloud
as an :class:`EncoderPlan`. The learned part runs on the autodiff engine.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path
from dataclasses import asdict, dataclass, field

import numpy as np

from lte import sampling
from lte.autodiff import engine as ad
from lte.autodiff.engine import GraphStateError
from lte.autodiff.nn import MLP, LayerNorm, Linear

LTE1_MAGIC = b"LTE1"
LTE1_VERSION = 1
IN_FEATURES = 13  # position, normal, albedo, emission, roughness

# attention score pairs evaluated (query, key, head), summed over calls
OP_COUNTERS = {"attention_pairs": 0}


class EmbeddingFormatError(ValueError):
    pass


def reset_counters():
    for k in OP_COUNTERS:
        OP_COUNTERS[k] = 0


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    knn: int = 16
    reduction: float = 0.5
    blocks: int = 4
    heads: int = 4
    patch: int = 256
    hidden_ratio: int = 2
    zorder_bits: int = 10

    def validate(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.patch < self.knn:
            raise ValueError(f"patch {self.patch} smaller than knn {self.knn}")
        if not 0 < self.reduction <= 1:
            raise ValueError("reduction must lie in (0, 1]")
        return self

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class EncoderPlan:
    """Parameter-free structure of one cloud, all indices into canonical order."""

    features: np.ndarray  # (M, 13), canonical order
    anchor_idx: np.ndarray  # (m,)
    anchors: np.ndarray  # (m, 3)
    neighbours: np.ndarray  # (m, k)
    serial: np.ndarray  # (m,) anchor order along the Z curve
    patches: list = field(default_factory=list)  # per block: (gather_idx (np, P), mask (np, P), inverse (m,))


def _patch_layout(m, P, shift):
    """Contiguous windows of a length-m sequence starting at ``shift`` (wrapping)."""
    seq = (np.arange(m) + shift) % m
    n_patch = -(-m // P)
    idx = np.zeros(n_patch * P, dtype=np.int64)
    mask = np.zeros(n_patch * P, dtype=bool)
    idx[:m] = seq
    mask[:m] = True
    inverse = np.empty(m, dtype=np.int64)
    inverse[seq] = np.arange(m)
    return idx.reshape(n_patch, P), mask.reshape(n_patch, P), inverse


def plan_encoder(cloud, config: EncoderConfig):
    config.validate()
    M = len(cloud)
    if M < config.knn:
        raise ValueError(f"cloud has {M} points, fewer than knn={config.knn}")
    canon = sampling.canonical_order(cloud.positions)
    feats = cloud.features()[canon]
    pos = np.ascontiguousarray(feats[:, :3])
    m = max(1, math.ceil(M * config.reduction))
    anchor_idx = sampling.farthest_point_sample(pos, m, 0)
    anchors = pos[anchor_idx]
    nbr, _ = sampling.KNN(pos).query(anchors, config.knn)
    serial = sampling.serialize_zorder(anchors, config.zorder_bits)
    P = config.patch
    patches = []
    for b in range(config.blocks):
        shift = P // 2 if (b % 2 == 1 and m > P) else 0
        patches.append(_patch_layout(m, P, shift))
    return EncoderPlan(feats, anchor_idx, anchors, nbr, serial, patches)


class Encoder:
    def __init__(self, store, config: EncoderConfig, prefix="encoder"):
        config.validate()
        self.store = store
        self.config = config
        D = config.dim
        hid = D * config.hidden_ratio
        self.F = MLP(store, f"{prefix}.F", [IN_FEATURES, D, D])
        self.G = MLP(store, f"{prefix}.G", [2 * D, D, D])
        self.blocks = []
        for b in range(config.blocks):
            p = f"{prefix}.block{b}"
            self.blocks.append({
                "ln1": LayerNorm(store, f"{p}.ln1", D),
                "qkv": Linear(store, f"{p}.qkv", D, 3 * D),
                "proj": Linear(store, f"{p}.proj", D, D, scale=0.5),
                "ln2": LayerNorm(store, f"{p}.ln2", D),
                "mlp": MLP(store, f"{p}.mlp", [D, hid, D], last_scale=0.5),
            })
        self.retain = False
        self.retained = None

    # nearest-neighbour embedding
    def embed(self, plan: EncoderPlan):
        """(m, D) anchor features: max over k of G(concat(X_nbr - X_anchor, X_anchor))."""
        k = self.config.knn
        X = self.F(ad.Tensor(plan.features))
        Xa = ad.gather(X, plan.anchor_idx)
        Xn = ad.gather(X, plan.neighbours)
        Xa_k = ad.expand(Xa, 1, k)
        h = self.G(ad.concat([ad.sub(Xn, Xa_k), Xa_k], axis=-1))
        out, _ = ad.max_reduce(h, 1)
        return out

    def _attention(self, blk, x, layout):
        idx, mask, inverse = layout
        n_patch, P = idx.shape
        D, H = self.config.dim, self.config.heads
        dh = D // H
        qkv = blk["qkv"](blk["ln1"](x))  # (m, 3D)
        tok = ad.gather(qkv, idx)  # (np, P, 3D)
        tok = ad.transpose(ad.reshape(tok, (n_patch, P, 3, H, dh)), (2, 0, 3, 1, 4))  # (3, np, H, P, dh)
        qs = ad.reshape(ad.gather(tok, np.array([0])), (n_patch, H, P, dh))
        ks = ad.reshape(ad.gather(tok, np.array([1])), (n_patch, H, P, dh))
        vs = ad.reshape(ad.gather(tok, np.array([2])), (n_patch, H, P, dh))
        scores = ad.mul(ad.matmul(qs, ad.transpose(ks, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        key_mask = np.broadcast_to(mask[:, None, None, :], scores.shape)
        attn = ad.softmax(scores, axis=-1, mask=key_mask)
        valid = mask.sum(1)
        OP_COUNTERS["attention_pairs"] += int((valid * valid).sum()) * H
        if self.retain:
            self.retained.append((idx, mask, attn.data.copy()))
        o = ad.matmul(attn, vs)  # (np, H, P, dh)
        o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (n_patch * P, D))
        return blk["proj"](ad.gather(o, inverse))

    def encode(self, latents, plan: EncoderPlan):
        """Transformer blocks over Z-ordered anchors; returns (m, D) in anchor order."""
        if self.retain:
            self.retained = []
        if not self.blocks:
            return latents
        x = ad.gather(latents, plan.serial)
        for blk, layout in zip(self.blocks, plan.patches):
            x = ad.add(x, self._attention(blk, x, layout))
            x = ad.add(x, blk["mlp"](blk["ln2"](x)))
        undo = np.empty_like(plan.serial)
        undo[plan.serial] = np.arange(len(plan.serial))
        return ad.gather(x, undo)

    def __call__(self, plan: EncoderPlan):
        return self.encode(self.embed(plan), plan)

    def dense_attention_reference(self, x, blk_index=0):
        """Full self-attention of one block over all rows of ``x`` (numpy, no patches)."""
        blk = self.blocks[blk_index]
        D, H = self.config.dim, self.config.heads
        dh = D // H
        qkv = blk["qkv"](blk["ln1"](x)).data
        m = len(qkv)
        q, k, v = (qkv[:, i * D:(i + 1) * D].reshape(m, H, dh).transpose(1, 0, 2) for i in range(3))
        s = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
        s = np.exp(s - s.max(-1, keepdims=True))
        a = s / s.sum(-1, keepdims=True)
        o = (a @ v).transpose(1, 0, 2).reshape(m, D)
        return blk["proj"](ad.Tensor(o, dtype=o.dtype)).data


@dataclass(frozen=True, eq=False)
class LightTransportEmbedding:
    anchors: np.ndarray  # (m, 3)
    latents: np.ndarray  # (m, D)
    scene_hash: str = ""
    config_hash: str = ""

    def __len__(self):
        return len(self.anchors)

    def save(self, path):
        """Write the LTE1 container.

        Little-endian: "LTE1" | u32 version | u32 m | u32 D | u32 len + UTF-8 scene hash |
        u32 len + UTF-8 config hash | f32 anchors (m, 3) | f32 latents (m, D).
        """
        anchors = np.ascontiguousarray(self.anchors, dtype="<f4")
        latents = np.ascontiguousarray(self.latents, dtype="<f4")
        m, D = latents.shape
        if anchors.shape != (m, 3):
            raise ValueError(f"anchors {anchors.shape} do not match latents {latents.shape}")
        sh, ch = self.scene_hash.encode(), self.config_hash.encode()
        with open(path, "wb") as f:
            f.write(LTE1_MAGIC + struct.pack("<III", LTE1_VERSION, m, D))
            f.write(struct.pack("<I", len(sh)) + sh + struct.pack("<I", len(ch)) + ch)
            f.write(anchors.tobytes())
            f.write(latents.tobytes())

    @classmethod
    def load(cls, path):
        buf = Path(path).read_bytes()
        if buf[:4] != LTE1_MAGIC:
            raise EmbeddingFormatError(f"{path}: bad magic {buf[:4]!r}")
        version, m, D = struct.unpack_from("<III", buf, 4)
        if version != LTE1_VERSION:
            raise EmbeddingFormatError(f"{path}: unsupported version {version}")
        pos = 16
        hashes = []
        for _ in range(2):
            (n,) = struct.unpack_from("<I", buf, pos)
            hashes.append(buf[pos + 4:pos + 4 + n].decode())
            pos += 4 + n
        if len(buf) != pos + 4 * m * (3 + D):
            raise EmbeddingFormatError(f"{path}: size {len(buf)} does not match m={m}, D={D}")
        anchors = np.frombuffer(buf, "<f4", 3 * m, pos).reshape(m, 3).astype(np.float32)
        latents = np.frombuffer(buf, "<f4", D * m, pos + 12 * m).reshape(m, D).astype(np.float32)
        return cls(anchors, latents, *hashes)


def attention_scores_dump(encoder: Encoder, plan: EncoderPlan, focus_anchor, top_n=200):
    """Top anchors by attention from ``focus_anchor`` (anchor order), max over blocks and heads.

    Returns a list of (anchor index, score) sorted by score descending, ties by index.
    """
    if not encoder.retained:
        raise GraphStateError("attention scores were not retained; set encoder.retain and encode first")
    m = len(plan.anchors)
    serial_pos = np.empty(m, dtype=np.int64)
    serial_pos[plan.serial] = np.arange(m)
    f = serial_pos[focus_anchor]
    best = np.zeros(m)
    for idx, mask, attn in encoder.retained:
        flat = idx.reshape(-1)
        where = np.flatnonzero((flat == f) & mask.reshape(-1))[0]
        p, row = divmod(where, idx.shape[1])
        scores = attn[p, :, row, :].max(0)  # (P,) over heads
        keys = idx[p][mask[p]]
        anchor_ids = plan.serial[keys]
        np.maximum.at(best, anchor_ids, scores[mask[p]])
    order = np.lexsort((np.arange(m), -best))[: min(top_n, m)]
    return [(int(i), float(best[i])) for i in order]
