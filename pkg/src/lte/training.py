"""Loss, learning-rate schedule, dataset container, and the train / evaluate loops.

Dataset container (all little-endian)::

    "LTDS" | u32 version | u32 scene count | u32 task kind | u32 grid res
    u64 offset per scene (absolute byte position of its record)
    per scene: u32 id length, UTF-8 id,
               u64 M, f32 positions (M,3), normals (M,3), albedo (M,3), emission (M,3), roughness (M)
               u64 N, f32 positions (N,3), normals (N,3), albedo (N,3),
               u64 target count, f32 targets (N,3) or (N,res,res,3); count 0 = not baked yet

Task kinds: 0 irradiance, 1 indirect (irradiance without directly visible
emitters), 2 radiance grids.
"""
from __future__ import annotations

import csv
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lte import sampling
from lte.autodiff import engine as ad
from lte.autodiff.optim import Adam
from lte.metrics import mse, psnr, ssim
from lte.model import TARGET_KINDS, LTEModel, ModelConfig
from lte.sampling import QueryPointSet, ScenePointCloud
from lte.tracer.integrators import GRID_RES, grid_bin_centers, grid_irradiance

log = logging.getLogger(__name__)

LTDS_MAGIC = b"LTDS"
LTDS_VERSION = 1
LOSS_HEADER = ["step", "loss", "smoothed", "lr", "scene"]
METRICS_HEADER = ["scene", "method", "count", "mse", "psnr", "ssim"]


class TrainingError(RuntimeError):
    pass


class DatasetError(ValueError):
    pass


# ------------------------------------------------------------------ loss

def log_rel_l2_loss(pred, target, eps=0.01):
    """mean(((ln(p+1) - ln(y+1)) / (ln(p+1) + eps))^2) over points and channels."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=pred.data.dtype)
    if np.any(pred.data < 0) or np.any(target < 0):
        raise ValueError("log_rel_l2_loss: inputs must be non-negative")
    a = ad.log(ad.add(pred, 1.0))
    # same ops and dtype as ``a`` so that pred == target gives exactly zero
    b = np.log(target + np.asarray(1.0, dtype=target.dtype))
    inv = ad.exp(ad.mul(ad.log(ad.add(a, eps)), -1.0))
    r = ad.mul(ad.sub(a, b), inv)
    return ad.mean(ad.mul(r, r))


# -------------------------------------------------------------- schedule

@dataclass(frozen=True)
class Schedule:
    total_steps: int
    base_lr: float = 1e-3
    warmup_steps: int = 1000
    batch_queries: int = 8192

    def __post_init__(self):
        if not self.warmup_steps < self.total_steps:
            raise ValueError(f"warmup_steps {self.warmup_steps} must be < total_steps {self.total_steps}")


def lr_at(step, schedule: Schedule):
    """Linear warm-up from 0, then cosine decay to 0 at total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# --------------------------------------------------------------- dataset

@dataclass(frozen=True, eq=False)
class SceneRecord:
    scene_id: str
    cloud: ScenePointCloud
    queries: QueryPointSet


@dataclass(eq=False)
class Dataset:
    kind: str
    records: list = field(default_factory=list)
    grid_res: int = GRID_RES

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise DatasetError(f"unknown task kind {self.kind!r}")

    def __len__(self):
        return len(self.records)

    @property
    def baked(self):
        return all(r.queries.targets is not None for r in self.records)

    def add(self, record: SceneRecord):
        t = record.queries.targets
        if t is None:
            self.records.append(record)
            return self
        want = (len(record.queries), self.grid_res, self.grid_res, 3) if self.kind == "radiance" \
            else (len(record.queries), 3)
        if t.shape != want:
            raise DatasetError(f"scene {record.scene_id}: targets {t.shape} do not match kind {self.kind} {want}")
        self.records.append(record)
        return self


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _record_bytes(rec: SceneRecord):
    c, q = rec.cloud, rec.queries
    sid = rec.scene_id.encode("utf-8")
    parts = [struct.pack("<I", len(sid)), sid, struct.pack("<Q", len(c)),
             _f32(c.positions), _f32(c.normals), _f32(c.albedo), _f32(c.emission), _f32(c.roughness),
             struct.pack("<Q", len(q)), _f32(q.positions), _f32(q.normals), _f32(q.albedo),
             struct.pack("<Q", 0 if q.targets is None else q.targets.size),
             b"" if q.targets is None else _f32(q.targets)]
    return b"".join(parts)


def save_dataset(path, ds: Dataset):
    blobs = [_record_bytes(r) for r in ds.records]
    head = LTDS_MAGIC + struct.pack("<IIII", LTDS_VERSION, len(blobs), TARGET_KINDS.index(ds.kind), ds.grid_res)
    off = len(head) + 8 * len(blobs)
    offsets = []
    for b in blobs:
        offsets.append(off)
        off += len(b)
    with open(path, "wb") as f:
        f.write(head)
        f.write(struct.pack(f"<{len(blobs)}Q", *offsets))
        for b in blobs:
            f.write(b)


def load_dataset(path):
    buf = Path(path).read_bytes()
    if buf[:4] != LTDS_MAGIC or len(buf) < 20:
        raise DatasetError(f"{path}: bad magic {buf[:4]!r}")
    try:
        return _parse_dataset(path, buf)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, DatasetError):
            raise
        raise DatasetError(f"{path}: truncated or corrupt ({e})") from None


def _parse_dataset(path, buf):
    version, count, kind, res = struct.unpack_from("<IIII", buf, 4)
    if version != LTDS_VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    if kind >= len(TARGET_KINDS):
        raise DatasetError(f"{path}: unknown task kind {kind}")
    offsets = struct.unpack_from(f"<{count}Q", buf, 20)
    ds = Dataset(TARGET_KINDS[kind], grid_res=res)
    for off in offsets:
        pos = off

        def take(n, shape):
            nonlocal pos
            a = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
            return a

        (ln,) = struct.unpack_from("<I", buf, pos)
        sid = buf[pos + 4:pos + 4 + ln].decode("utf-8")
        pos += 4 + ln
        (M,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        cloud = ScenePointCloud(take(3 * M, (M, 3)), take(3 * M, (M, 3)), take(3 * M, (M, 3)),
                                take(3 * M, (M, 3)), take(M, (M,)))
        (N,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        qp, qn, qa = take(3 * N, (N, 3)), take(3 * N, (N, 3)), take(3 * N, (N, 3))
        (T,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        shape = (N, res, res, 3) if ds.kind == "radiance" else (N, 3)
        if T == 0:
            ds.add(SceneRecord(sid, cloud, QueryPointSet(qp, qn, qa)))
            continue
        if T != int(np.prod(shape)):
            raise DatasetError(f"{path}: scene {sid} has {T} target values, expected shape {shape}")
        ds.add(SceneRecord(sid, cloud, QueryPointSet(qp, qn, qa, take(T, shape))))
    return ds


# --------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: LTEModel
    losses: list
    checkpoints: list
    seconds: float


def smooth(values, alpha=0.05):
    out, s = [], None
    for v in values:
        s = v if s is None else (1 - alpha) * s + alpha * v
        out.append(s)
    return out


def _batch_loss(model, kind, latents, plan, queries, idx, nbr, rng, bins_per_query):
    q = queries.take(idx)
    latent = model.decoder.point_latent(latents, plan.anchors, q, nbr[idx])
    if kind != "radiance":
        return log_rel_l2_loss(model.decoder.irradiance(latent), q.targets)
    res = queries.targets.shape[1]
    flat = q.targets.reshape(len(idx), res * res, 3)
    pick = rng.integers(0, res * res, (len(idx), bins_per_query))
    local = grid_bin_centers(res).reshape(-1, 3)[pick]
    tgt = np.take_along_axis(flat, pick[..., None], axis=1)
    loss = log_rel_l2_loss(model.decoder.radiance(latent, local), tgt)
    if model.decoder.out_irr is not None:
        loss = ad.add(loss, log_rel_l2_loss(model.decoder.irradiance(latent), grid_irradiance(q.targets)))
    return loss


def train(dataset: Dataset, model_config: ModelConfig, schedule: Schedule, mode="scratch", seed=0,
          init_checkpoint=None, checkpoint_every=None, out_dir=None, loss_csv=None,
          bins_per_query=32, log_every=50, eps_smooth=0.05):
    """Optimize encoder + decoder (scratch) or decoder only (finetune_decoder)."""
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    if not dataset.baked:
        raise DatasetError("dataset has scenes without baked targets")
    if mode not in ("scratch", "finetune_decoder"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "finetune_decoder":
        if init_checkpoint is None:
            raise ValueError("finetune_decoder needs a checkpoint")
        base = LTEModel.load(init_checkpoint)
        model = LTEModel(model_config)
        for name, t in base.store.items():
            if name.startswith("encoder.") and name in model.store:
                model.store[name].data = t.data.copy()
    else:
        model = LTEModel(model_config)
        if init_checkpoint is not None:
            model = LTEModel.load(init_checkpoint)
    trainable = model.store.names("decoder.") if mode == "finetune_decoder" else list(model.store)
    opt = Adam(model.store, trainable)

    plans = [model.plan(r.cloud) for r in dataset.records]
    nbrs = [model.neighbours(p, r.queries.positions) for p, r in zip(plans, dataset.records)]
    frozen_cache = {}

    losses, ckpts = [], []
    out_dir = Path(out_dir) if out_dir else None
    t0 = time.time()
    writer = None
    fh = None
    if loss_csv:
        fh = open(loss_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOSS_HEADER)
    sm = None
    try:
        for step in range(schedule.total_steps):
            rng = np.random.default_rng([seed, step])
            si = int(rng.integers(len(dataset)))
            rec, plan = dataset.records[si], plans[si]
            n = len(rec.queries)
            B = min(schedule.batch_queries, n)
            idx = np.sort(rng.choice(n, B, replace=False))
            lr = lr_at(step, schedule)
            model.store.zero_grad()
            with ad.Graph() as g:
                if mode == "finetune_decoder":
                    if si not in frozen_cache:
                        frozen_cache[si] = ad.Tensor(model.encoder(plan).data)
                    latents = frozen_cache[si]
                else:
                    latents = model.encoder(plan)
                loss = _batch_loss(model, dataset.kind, latents, plan, rec.queries, idx, nbrs[si], rng,
                                   bins_per_query)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at step {step} (scene {rec.scene_id}, lr {lr:.3g})")
            g.backward(loss)
            opt.step(lr)
            sm = value if sm is None else (1 - eps_smooth) * sm + eps_smooth * value
            losses.append(value)
            if writer:
                writer.writerow([step, f"{value:.8g}", f"{sm:.8g}", f"{lr:.8g}", rec.scene_id])
            if log_every and step % log_every == 0:
                log.info("step %d loss %.5f smoothed %.5f lr %.2e", step, value, sm, lr)
            if checkpoint_every and out_dir and (step + 1) % checkpoint_every == 0:
                p = out_dir / f"step{step + 1:06d}.ltec"
                model.save(p)
                ckpts.append(p)
    finally:
        if fh:
            fh.close()
    return TrainResult(model, losses, ckpts, time.time() - t0)


# -------------------------------------------------------------- evaluation

def idw_interpolate(probe_positions, probe_values, query_positions, k=8, power=2.0):
    """Inverse-distance-weighted average of the k nearest probes."""
    k = min(k, len(probe_positions))
    idx, dist = sampling.knn(probe_positions, query_positions, k)
    exact = dist[:, 0] <= 1e-12
    w = 1.0 / np.maximum(dist, 1e-12) ** power
    out = (w[..., None] * probe_values[idx]).sum(1) / w.sum(1, keepdims=True)
    out[exact] = probe_values[idx[exact, 0]]
    return out


def point_metrics(pred, ref):
    return {"mse": mse(pred, ref), "psnr": psnr(pred, ref), "ssim": float("nan")}


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r["scene"], r["method"], r["count"], f"{r['mse']:.9g}", f"{r['psnr']:.9g}",
                        f"{r['ssim']:.9g}"])


def read_metrics_csv(path):
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        if header != METRICS_HEADER:
            raise DatasetError(f"{path}: unexpected header {header}")
        return [{"scene": r[0], "method": r[1], "count": int(r[2]), "mse": float(r[3]), "psnr": float(r[4]),
                 "ssim": float(r[5])} for r in rd]


def aggregate(rows):
    out = []
    for method in sorted({r["method"] for r in rows}):
        rs = [r for r in rows if r["method"] == method and r["scene"] != "mean"]
        out.append({"scene": "mean", "method": method, "count": int(sum(r["count"] for r in rs)),
                    "mse": float(np.mean([r["mse"] for r in rs])),
                    "psnr": float(np.mean([r["psnr"] for r in rs])),
                    "ssim": float(np.mean([r["ssim"] for r in rs]))})
    return out


def split_probes(dataset: Dataset, n_probes=64):
    """Hold out the first ``n_probes`` queries of every scene as interpolation probes.

    Returns (dataset of the remaining queries, {scene id: (probe positions, probe targets)}).
    """
    rest = Dataset(dataset.kind, grid_res=dataset.grid_res)
    probes = {}
    for r in dataset.records:
        if len(r.queries) <= n_probes:
            raise DatasetError(f"scene {r.scene_id}: {len(r.queries)} queries, need more than {n_probes}")
        t = r.queries.targets
        if dataset.kind == "radiance":
            t = grid_irradiance(t)
        probes[r.scene_id] = (r.queries.positions[:n_probes], t[:n_probes])
        rest.add(SceneRecord(r.scene_id, r.cloud, r.queries.take(slice(n_probes, None))))
    return rest, probes


def evaluate(model: LTEModel, dataset: Dataset, out_csv=None, probes=None, images=None):
    """Per-scene metrics at held-out query points.

    ``probes`` maps scene id -> (positions, values) baked in that scene; when given,
    an inverse-distance (k=8) interpolation baseline is scored alongside.
    ``images`` maps scene id -> (predicted, reference) image pairs for image metrics.
    """
    rows = []
    for rec in dataset.records:
        emb = model.embed(rec.cloud)
        pred = model.predict_irradiance(emb, rec.queries)
        ref = rec.queries.targets
        rows.append({"scene": rec.scene_id, "method": "model", "count": len(ref), **point_metrics(pred, ref)})
        if probes and rec.scene_id in probes:
            pp, pv = probes[rec.scene_id]
            base = idw_interpolate(pp, pv, rec.queries.positions)
            rows.append({"scene": rec.scene_id, "method": "idw_baseline", "count": len(ref),
                         **point_metrics(base, ref)})
    for sid, (pi, ri) in (images or {}).items():
        rows.append({"scene": sid, "method": "image", "count": int(np.prod(ri.shape[:2])),
                     "mse": mse(pi, ri), "psnr": psnr(pi, ri), "ssim": ssim(pi, ri)})
    rows += aggregate(rows)
    if out_csv:
        write_metrics_csv(out_csv, rows)
    return rows
