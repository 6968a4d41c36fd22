"""Encoder + decoder bundle, inference helpers, and checkpoint save/load."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from lte import sampling
from lte.autodiff import checkpoint
from lte.autodiff import engine as ad
from lte.autodiff.nn import ParamStore
from lte.decoder import Decoder, DecoderConfig, world_to_query_local
from lte.encoder import Encoder, EncoderConfig, LightTransportEmbedding, plan_encoder
from lte.tracer.integrators import GRID_RES, grid_bin_centers

log = logging.getLogger(__name__)

TARGET_KINDS = ("irradiance", "indirect", "radiance")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    seed: int = 0
    target: str = "indirect"  # what the irradiance head was trained on

    def to_dict(self):
        return {"encoder": asdict(self.encoder), "decoder": asdict(self.decoder),
                "seed": self.seed, "target": self.target}

    @classmethod
    def from_dict(cls, d):
        return cls(EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]), d.get("seed", 0),
                   d.get("target", "indirect"))


class LTEModel:
    def __init__(self, config: ModelConfig = None):
        self.config = config or ModelConfig()
        if self.config.encoder.dim != self.config.decoder.dim:
            raise ValueError("encoder and decoder dims differ")
        self.store = ParamStore(self.config.seed)
        self.encoder = Encoder(self.store, self.config.encoder)
        self.decoder = Decoder(self.store, self.config.decoder)
        self._anchor_knn = {}

    # ---------------------------------------------------------- structure
    def plan(self, cloud):
        return plan_encoder(cloud, self.config.encoder)

    def neighbours(self, plan, positions, kappa=None):
        """(n, kappa) anchor indices for query positions; the KNN index is cached per plan."""
        key = id(plan)
        if key not in self._anchor_knn or self._anchor_knn[key][0] is not plan:
            self._anchor_knn[key] = (plan, sampling.KNN(plan.anchors))
        kappa = min(kappa or self.config.decoder.kappa, len(plan.anchors))
        return self._anchor_knn[key][1].query(positions, kappa)[0]

    # ---------------------------------------------------------- inference
    def embed(self, cloud_or_plan, scene_hash=""):
        plan = cloud_or_plan if hasattr(cloud_or_plan, "anchors") else self.plan(cloud_or_plan)
        lat = self.encoder(plan)
        return LightTransportEmbedding(plan.anchors, lat.data.copy(), scene_hash, self.config_hash())

    def config_hash(self):
        return self.config.encoder.digest() + self.config.decoder.digest()

    def _chunks(self, n, size):
        for s in range(0, n, size):
            yield s, min(n, s + size)

    def predict_irradiance(self, embedding, queries, batch=4096, scene_hash=None):
        if len(embedding) == 0:
            raise ValueError("empty embedding")
        if scene_hash and embedding.scene_hash and scene_hash != embedding.scene_hash:
            log.warning("embedding was computed for a different scene")
        knn = sampling.KNN(embedding.anchors)
        kappa = min(self.config.decoder.kappa, len(embedding))
        lat = ad.Tensor(embedding.latents)
        out = np.zeros((len(queries), 3), dtype=np.float32)
        for s, e in self._chunks(len(queries), batch):
            q = queries.take(slice(s, e))
            nbr = knn.query(q.positions, kappa)[0]
            out[s:e] = self.decoder.irradiance(self.decoder.point_latent(lat, embedding.anchors, q, nbr)).data
        return out

    def predict_radiance(self, embedding, queries, directions, batch=512):
        """Radiance for world-space ``directions`` (n, r, 3) on each query's hemisphere."""
        knn = sampling.KNN(embedding.anchors)
        kappa = min(self.config.decoder.kappa, len(embedding))
        lat = ad.Tensor(embedding.latents)
        directions = np.asarray(directions, dtype=np.float64)
        if np.any((directions * queries.normals[:, None, :]).sum(-1) < -1e-9):
            raise ValueError("direction below the query hemisphere")
        out = np.zeros(directions.shape, dtype=np.float32)
        for s, e in self._chunks(len(queries), batch):
            q = queries.take(slice(s, e))
            nbr = knn.query(q.positions, kappa)[0]
            latent = self.decoder.point_latent(lat, embedding.anchors, q, nbr)
            local = np.clip(world_to_query_local(directions[s:e], q.normals), -1, 1)
            local[..., 2] = np.maximum(local[..., 2], 0.0)
            out[s:e] = self.decoder.radiance(latent, local).data
        return out

    def predict_grid(self, embedding, queries, res=GRID_RES, batch=64):
        """Predicted radiance grid (n, res, res, 3) at bin-center directions."""
        knn = sampling.KNN(embedding.anchors)
        kappa = min(self.config.decoder.kappa, len(embedding))
        lat = ad.Tensor(embedding.latents)
        local = grid_bin_centers(res).reshape(1, -1, 3)
        out = np.zeros((len(queries), res, res, 3), dtype=np.float32)
        for s, e in self._chunks(len(queries), batch):
            q = queries.take(slice(s, e))
            nbr = knn.query(q.positions, kappa)[0]
            latent = self.decoder.point_latent(lat, embedding.anchors, q, nbr)
            dirs = np.broadcast_to(local, (e - s,) + local.shape[1:])
            out[s:e] = self.decoder.radiance(latent, dirs).data.reshape(e - s, res, res, 3)
        return out

    # ---------------------------------------------------------- persistence
    def save(self, path):
        path = Path(path)
        checkpoint.save_params(path, self.store)
        sidecar(path).write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        side = sidecar(path)
        if not side.exists():
            raise checkpoint.CheckpointError(f"{path}: missing config sidecar {side.name}")
        model = cls(ModelConfig.from_dict(json.loads(side.read_text())))
        checkpoint.load_params(path, model.store)
        return model


def sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".json")
