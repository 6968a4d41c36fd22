"""Local query decoder: subtraction cross-attention over the k nearest latent codes."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from lte.autodiff import engine as ad
from lte.autodiff.nn import MLP, LayerNorm, Linear
from lte.tracer.sampling import tangent_frame, to_local

log = logging.getLogger(__name__)

QUERY_FEATURES = 9  # position, normal, albedo
DIR_OCTAVES = 4
DIR_FEATURES = 2 + 4 * DIR_OCTAVES  # raw (cos theta, phi / 2pi) + sin/cos per octave


@dataclass(frozen=True)
class DecoderConfig:
    dim: int = 64
    kappa: int = 32
    blocks: int = 2
    pe_hidden: int = 32
    head: str = "irradiance"  # "directional", or "both" for a jointly trained pair
    head_hidden: int = 64
    ablate_position: bool = False  # drop p from the query projection H

    def validate(self):
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.head not in ("irradiance", "directional", "both"):
            raise ValueError(f"unknown head {self.head!r}")
        return self

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def direction_encoding(local):
    """Frequency features of local unit directions (..., 3): (cos theta, phi) at 4 octaves."""
    cos_t = local[..., 2]
    phi = np.mod(np.arctan2(local[..., 1], local[..., 0]), 2 * np.pi)
    feats = [cos_t, phi / (2 * np.pi)]
    for o in range(DIR_OCTAVES):
        f = 2.0 ** o
        feats += [np.sin(f * np.pi * cos_t), np.cos(f * np.pi * cos_t), np.sin(f * phi), np.cos(f * phi)]
    return np.stack(feats, axis=-1)


class Decoder:
    def __init__(self, store, config: DecoderConfig, prefix="decoder"):
        config.validate()
        self.store = store
        self.config = config
        D = config.dim
        self.H = MLP(store, f"{prefix}.H", [QUERY_FEATURES, D, D])
        self.gamma = MLP(store, f"{prefix}.gamma", [3, config.pe_hidden, D])
        self.blocks = []
        for b in range(config.blocks):
            p = f"{prefix}.block{b}"
            self.blocks.append({
                "wq": Linear(store, f"{p}.wq", D, D),
                "wk": Linear(store, f"{p}.wk", D, D),
                "wv": Linear(store, f"{p}.wv", D, D),
                "attn": MLP(store, f"{p}.attn", [D, D, D]),
                "ln": LayerNorm(store, f"{p}.ln", D),
                "mlp": MLP(store, f"{p}.mlp", [D, 2 * D, D], last_scale=0.5),
            })
        hh = config.head_hidden
        self.out_irr = self.out_dir = None
        if config.head in ("irradiance", "both"):
            self.out_irr = MLP(store, f"{prefix}.head_irr", [D, hh, 3])
        if config.head in ("directional", "both"):
            self.out_dir = MLP(store, f"{prefix}.head_dir", [D + DIR_FEATURES, hh, hh, 3])
        # zero final layers: the untrained model predicts softplus(0) = ln 2 everywhere
        for head in (self.out_irr, self.out_dir):
            if head is not None:
                store[head.layers[-1].w].data[...] = 0.0

    def cross_attention(self, blk, q, K, V, pos_enc, nbr):
        """One block of vector attention; q (n, D), K/V (m, D) per anchor, nbr (n, kappa)."""
        kappa = nbr.shape[1]
        Fk = ad.gather(K, nbr)  # (n, kappa, D)
        Fv = ad.gather(V, nbr)
        a_raw = ad.add(ad.sub(ad.expand(blk["wq"](q), 1, kappa), Fk), pos_enc)
        A = ad.softmax(blk["attn"](a_raw), axis=1)
        return ad.sum(ad.mul(A, ad.add(Fv, pos_enc)), axis=1), A

    def point_latent(self, latents, anchors, queries, nbr, return_attention=False):
        """Per-query latent after all blocks; ``nbr`` are (n, kappa) anchor indices."""
        if len(anchors) == 0:
            raise ValueError("empty embedding")
        if nbr.shape[1] == 0:
            raise ValueError("kappa must be >= 1")
        # a fixed summation order makes the output independent of neighbour order bit for bit
        nbr = np.sort(nbr, axis=1)
        p = queries.positions
        qin = np.concatenate([np.zeros_like(p) if self.config.ablate_position else p,
                              queries.normals, queries.albedo], axis=1)
        q = self.H(ad.Tensor(qin))
        dp = p[:, None, :] - anchors[nbr]
        pos_enc = self.gamma(ad.Tensor(dp))
        attn = []
        for blk in self.blocks:
            K = blk["wk"](latents)
            V = blk["wv"](latents)
            out, A = self.cross_attention(blk, q, K, V, pos_enc, nbr)
            attn.append(A)
            q = ad.add(q, out)
            q = ad.add(q, blk["mlp"](blk["ln"](q)))
        return (q, attn) if return_attention else q

    def irradiance(self, latent):
        if self.out_irr is None:
            raise ValueError("decoder has no irradiance head")
        return ad.softplus(self.out_irr(latent))

    def radiance(self, latent, local_dirs):
        """latent (n, D), local_dirs (n, r, 3) with z >= 0 -> (n, r, 3)."""
        if self.out_dir is None:
            raise ValueError("decoder has no directional head")
        if np.any(local_dirs[..., 2] < 0):
            raise ValueError("direction below the query hemisphere")
        r = local_dirs.shape[1]
        enc = ad.Tensor(direction_encoding(local_dirs))
        x = ad.concat([ad.expand(latent, 1, r), enc], axis=-1)
        return ad.softplus(self.out_dir(x))


def world_to_query_local(directions, normals):
    """Map world directions (n, r, 3) into each query's tangent frame."""
    t, b, n = tangent_frame(normals)
    frame = (t[:, None, :], b[:, None, :], n[:, None, :])
    return to_local(directions, frame)
