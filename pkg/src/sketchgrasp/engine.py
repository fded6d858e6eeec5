"""Joint training, checkpointing, evaluation, and the few-shot harness.

Training sums the proposal loss and the detection loss per step and follows
a stepwise-decayed SGD schedule. Every stochastic decision in a step flows
from one per-iteration seed derived from the config seed, so runs are
bitwise reproducible; checkpoints are length-prefixed binary records with a
trailing content digest.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import SGD, Tensor
from .data_synth import Dataset, SceneSample, SketchBank, derive_seed, few_shot_subset, flip_scene, jitter_brightness
from .detection import (
    AnchorSet,
    GraspPrediction,
    assign_roi_targets,
    assign_rpn_targets,
    hull_box,
    joint_loss,
    roi_forward,
    roi_loss,
    rpn_forward,
    rpn_loss,
    sample_roi_targets,
    sample_targets,
    select_proposals,
)
from .geometry import EvalReport, OrientedRect, precision_recall_at_k
from .model import GraspModel, ModelConfig, forward_features, infer_grasps
from .sketch_graph import RawDrawing

CHECKPOINT_MAGIC = b"SGCP"
CHECKPOINT_VERSION = 1

_MODEL_SEED_TAG = 0x40DE1  # derive-seed stream tag separating weight init from batch seeds


@dataclass
class TrainConfig:
    """Optimization schedule plus per-step sampling knobs.

    Defaults are the full-scale schedule; `desk()` shrinks batch and
    iteration budget to something a single CPU core finishes in minutes.
    """

    lr: float = 0.005
    lr_decay: float = 0.75
    decay_every: int = 2600
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 8
    max_iterations: int = 50000
    present_ratio: float = 0.9  # fraction of steps whose query category is in the scene
    rpn_batch: int = 256
    rpn_pos_fraction: float = 0.5
    roi_batch: int = 512
    roi_pos_fraction: float = 0.25
    gt_jitters: int = 2  # noisy copies of each ground-truth box fed to the second stage
    rpn_proposal_boxes: int = 16  # live first-stage proposals mixed into second-stage training
    random_boxes: int = 8
    flip_prob: float = 0.5
    brightness: float = 0.15
    score_thresh: float = 0.5  # serving-time "no result" cutoff
    checkpoint_every: int = 1000
    log_every: int = 25
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay < 1:
            raise ValueError("lr_decay must lie in (0, 1)")
        if self.decay_every <= 0:
            raise ValueError("decay_every must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        for name in ("batch_size", "max_iterations", "rpn_batch", "roi_batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.present_ratio <= 1:
            raise ValueError("present_ratio must lie in [0, 1]")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(
            batch_size=4,
            max_iterations=5000,
            decay_every=1600,
            rpn_batch=64,
            roi_batch=96,
            gt_jitters=4,
            checkpoint_every=1000,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        return cls(model=ModelConfig.paper_scale(), **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        doc["model"] = ModelConfig.from_dict(doc.get("model", {}))
        return cls(**doc)


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Stepwise-decayed learning rate at a 0-based iteration index."""
    if iteration < 0:
        raise ValueError(f"iteration must be nonnegative, got {iteration}")
    return config.lr * config.lr_decay ** (iteration // config.decay_every)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    version: int
    iteration: int
    config: TrainConfig
    params: dict[str, np.ndarray]  # float32, keyed by the model's named() layout
    digest: str  # sha256 hex of the serialized payload

    def to_bytes(self) -> bytes:
        payload = _checkpoint_payload(self.iteration, self.config, self.params)
        return payload + hashlib.sha256(payload).digest()


def _checkpoint_payload(iteration: int, config: TrainConfig, params: dict[str, np.ndarray]) -> bytes:
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<IQ", CHECKPOINT_VERSION, iteration)
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
    out += struct.pack("<I", len(cfg)) + cfg
    out += struct.pack("<I", len(params))
    for name in sorted(params):
        raw_name = name.encode()
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        out += struct.pack("<I", len(raw_name)) + raw_name
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        raw = arr.tobytes()
        out += struct.pack("<Q", len(raw)) + raw
    return bytes(out)


def make_checkpoint(model: GraspModel, iteration: int, config: TrainConfig) -> Checkpoint:
    params = {name: t.data.astype(np.float32, copy=True) for name, t in model.named().items()}
    payload = _checkpoint_payload(iteration, config, params)
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        iteration=iteration,
        config=config,
        params=params,
        digest=hashlib.sha256(payload).hexdigest(),
    )


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ckpt.to_bytes())
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Path) -> Checkpoint:
    """Parse and verify a checkpoint file (digest, then shapes vs its config)."""
    data = Path(path).read_bytes()
    if len(data) < 32:
        raise ValueError("truncated checkpoint")
    payload, file_digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != file_digest:
        raise ValueError(f"{path}: digest mismatch, checkpoint corrupted")
    r = _Reader(payload)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, iteration = r.unpack("<IQ")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("<I")
    config = TrainConfig.from_dict(json.loads(r.take(cfg_len).decode()))
    (n_records,) = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (data_len,) = r.unpack("<Q")
        arr = np.frombuffer(r.take(data_len), dtype="<f4").reshape(shape)
        params[name] = arr.astype(np.float32)
    if r.pos != len(payload):
        raise ValueError(f"{path}: trailing bytes after last record")

    template = GraspModel.init(config.model, seed=0).named()
    if set(template) != set(params):
        missing = sorted(set(template) - set(params))
        extra = sorted(set(params) - set(template))
        raise ValueError(f"{path}: parameter names do not match config (missing {missing}, extra {extra})")
    for name, t in template.items():
        if t.shape != params[name].shape:
            raise ValueError(
                f"{path}: parameter {name!r} has shape {params[name].shape} but config expects {t.shape}"
            )
    return Checkpoint(
        version=version,
        iteration=iteration,
        config=config,
        params=params,
        digest=hashlib.sha256(payload).hexdigest(),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> GraspModel:
    model = GraspModel.init(ckpt.config.model, seed=0)
    for name, t in model.named().items():
        t.data = ckpt.params[name].astype(np.float32, copy=True)
    return model


def _as_model(model_or_ckpt) -> GraspModel:
    if isinstance(model_or_ckpt, Checkpoint):
        return model_from_checkpoint(model_or_ckpt)
    return model_or_ckpt


# ---------------------------------------------------------------------------
# per-scene training loss


def _sample_query(scene: SceneSample, vocabulary: list[str], rng: np.random.Generator, present_ratio: float) -> str:
    present = sorted(set(scene.categories()))
    absent = [c for c in vocabulary if c not in present]
    if not absent or rng.random() < present_ratio:
        return present[int(rng.integers(len(present)))]
    return absent[int(rng.integers(len(absent)))]


def _augment(scene: SceneSample, rng: np.random.Generator, config: TrainConfig) -> SceneSample:
    if config.flip_prob > 0 and rng.random() < config.flip_prob:
        scene = flip_scene(scene)
    if config.brightness > 0:
        scene = jitter_brightness(scene, rng, 1.0 - config.brightness, 1.0 + config.brightness)
    return scene


def _roi_training_boxes(
    scene: SceneSample,
    queried: list[OrientedRect],
    anchors: AnchorSet,
    rpn_scores: Tensor,
    rpn_deltas: Tensor,
    config: TrainConfig,
    rng: np.random.Generator,
    include_rpn_proposals: bool,
) -> np.ndarray:
    """Second-stage candidate boxes: ground-truth hulls (from every object, so
    non-queried ones teach rejection), noisy copies of the queried hulls, live
    first-stage proposals, and uniform background boxes."""
    size = float(scene.image.shape[0])
    boxes = [hull_box(g) for obj in scene.objects for g in obj.grasps]
    for g in queried:
        hull = hull_box(g)
        for _ in range(config.gt_jitters):
            jit = hull.copy()
            jit[0] += rng.normal(0.0, 0.12) * hull[2]
            jit[1] += rng.normal(0.0, 0.12) * hull[3]
            jit[2:] *= np.exp(rng.normal(0.0, 0.25, size=2)).astype(np.float32)
            boxes.append(jit)
    if include_rpn_proposals and config.rpn_proposal_boxes > 0:
        props = select_proposals(
            anchors,
            rpn_scores.data,
            rpn_deltas.data,
            (int(size), int(size)),
            k=config.rpn_proposal_boxes,
            pre_nms=200,
        )
        boxes.extend(props.boxes)
    for _ in range(config.random_boxes):
        wh = np.exp(rng.uniform(np.log(12.0), np.log(size * 0.6), size=2))
        c = rng.uniform(4.0, size - 4.0, size=2)
        boxes.append(np.array([c[0], c[1], wh[0], wh[1]], dtype=np.float32))
    out = np.asarray(boxes, dtype=np.float32).reshape(-1, 4)
    out[:, 0] = np.clip(out[:, 0], 0.0, size)
    out[:, 1] = np.clip(out[:, 1], 0.0, size)
    out[:, 2:] = np.clip(out[:, 2:], 4.0, size)
    return out


def scene_loss(
    model: GraspModel,
    scene: SceneSample,
    drawing: RawDrawing,
    query: str,
    anchors: AnchorSet,
    config: TrainConfig,
    rng: np.random.Generator,
    include_rpn_proposals: bool = True,
) -> tuple[Tensor, float, float]:
    """Joint loss for one (scene, sketch query) pair; returns (loss, gp, gd)."""
    size = scene.image.shape[0]
    fused = forward_features(model, scene.image, drawing)
    scores, deltas = rpn_forward(fused, model.rpn)

    queried = [g for obj in scene.objects if obj.category == query for g in obj.grasps]
    rpn_targets = assign_rpn_targets(anchors, queried)
    rpn_sel = sample_targets(rpn_targets.labels, config.rpn_batch, config.rpn_pos_fraction, rng)
    l_gp, _ = rpn_loss(
        ad.gather(scores, rpn_sel),
        ad.gather(deltas, rpn_sel),
        rpn_targets.labels[rpn_sel],
        rpn_targets.deltas[rpn_sel],
        n_cls=config.rpn_batch,
        n_reg=config.rpn_batch,
    )

    proposals = _roi_training_boxes(
        scene, queried, anchors, scores, deltas, config, rng, include_rpn_proposals
    )
    all_grasps = [g for obj in scene.objects for g in obj.grasps]
    owners = [obj.category for obj in scene.objects for _ in obj.grasps]
    roi_targets = assign_roi_targets(proposals, all_grasps, owners, query)
    roi_sel = sample_roi_targets(roi_targets, config.roi_batch, config.roi_pos_fraction, rng)
    cls_logits, roi_deltas = roi_forward(
        fused, proposals[roi_sel], model.roi, model.config.stride, (size, size)
    )
    l_gd, _ = roi_loss(
        cls_logits,
        roi_deltas,
        roi_targets.classes[roi_sel],
        roi_targets.deltas[roi_sel],
        n_cls=config.roi_batch,
        n_reg=config.roi_batch,
    )
    loss = joint_loss(l_gp, l_gd)
    return loss, l_gp.item(), l_gd.item()


def make_loss_fn(model: GraspModel, scene: SceneSample, drawing: RawDrawing, query: str, config: TrainConfig, seed: int = 0):
    """Deterministic closure over fixed sampling decisions, for gradient checks."""
    anchors = model.anchors()

    def loss_fn() -> Tensor:
        rng = np.random.Generator(np.random.PCG64(seed))
        loss, _, _ = scene_loss(
            model, scene, drawing, query, anchors, config, rng, include_rpn_proposals=False
        )
        return loss

    return loss_fn


# ---------------------------------------------------------------------------
# training


def _check_vocabulary(dataset: Dataset, bank: SketchBank) -> None:
    have = set(bank.split("train"))
    need = set(dataset.categories)
    if not need <= have:
        raise ValueError(f"category vocabulary mismatch: dataset needs {sorted(need - have)} not in sketch bank")


def train(
    config: TrainConfig,
    dataset: Dataset,
    bank: SketchBank,
    out_dir: Path | None = None,
    metrics_path: Path | None = None,
    model: GraspModel | None = None,
    progress=None,
) -> Checkpoint:
    """Run the joint training loop; returns (and optionally saves) the final checkpoint.

    Deterministic given the config: every per-iteration random decision comes
    from a seed derived from (config.seed, iteration), and linear algebra is
    pinned to one thread.
    """
    _check_vocabulary(dataset, bank)
    if model is None:
        model = GraspModel.init(config.model, seed=derive_seed(config.seed, _MODEL_SEED_TAG))
    opt = SGD(model.named(), lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    train_indices = dataset.split_indices("train")
    if not train_indices:
        raise ValueError("dataset has no 'train' split")
    scenes = [dataset.load(i) for i in train_indices]
    anchors = model.anchors()
    vocabulary = sorted(dataset.categories)
    out_dir = Path(out_dir) if out_dir is not None else None

    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
    metrics_fh = open(metrics_path, "w") if metrics_path is not None else None
    try:
        with threadpool_limits(limits=1):
            for it in range(config.max_iterations):
                iteration = it + 1
                opt.lr = lr_at(it, config)
                batch_seed = derive_seed(config.seed, iteration)
                rng = np.random.Generator(np.random.PCG64(batch_seed))
                total = None
                gp_sum = 0.0
                gd_sum = 0.0
                scene_ids = []
                for _ in range(config.batch_size):
                    scene = scenes[int(rng.integers(len(scenes)))]
                    scene_ids.append(scene.scene_id)
                    scene = _augment(scene, rng, config)
                    query = _sample_query(scene, vocabulary, rng, config.present_ratio)
                    drawing = bank.sample("train", query, rng)
                    loss, gp, gd = scene_loss(model, scene, drawing, query, anchors, config, rng)
                    gp_sum += gp
                    gd_sum += gd
                    total = loss if total is None else ad.add(total, loss)
                loss_val = total.item()
                if not np.isfinite(loss_val):
                    raise RuntimeError(
                        f"non-finite loss {loss_val} at iteration {iteration}; "
                        f"batch seed {batch_seed}; scenes {scene_ids}"
                    )
                total.backward()
                # a step without positive anchors/rois leaves the matching
                # regression head untouched; its gradient is genuinely zero
                for p in opt.params.values():
                    if p.grad is None:
                        p.grad = np.zeros_like(p.data)
                opt.step()

                if iteration == 1 or iteration == config.max_iterations or iteration % config.log_every == 0:
                    record = {
                        "iter": iteration,
                        "loss": loss_val / config.batch_size,
                        "loss_gp": gp_sum / config.batch_size,
                        "loss_gd": gd_sum / config.batch_size,
                        "lr": opt.lr,
                    }
                    if metrics_fh is not None:
                        metrics_fh.write(json.dumps(record) + "\n")
                        metrics_fh.flush()
                    if progress is not None:
                        progress(record)
                if (
                    out_dir is not None
                    and config.checkpoint_every > 0
                    and iteration % config.checkpoint_every == 0
                    and iteration != config.max_iterations
                ):
                    save_checkpoint(make_checkpoint(model, iteration, config), out_dir / f"checkpoint-{iteration:06d}.bin")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    ckpt = make_checkpoint(model, config.max_iterations, config)
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir / "checkpoint-final.bin")
    return ckpt


# ---------------------------------------------------------------------------
# evaluation


def evaluate(
    model_or_ckpt,
    dataset: Dataset,
    scene_split: str,
    bank: SketchBank,
    sketch_split: str,
    ks=(1, 2, 3),
    seed: int = 0,
    score_thresh: float = 0.0,
    predict=None,
    max_scenes: int | None = None,
) -> EvalReport:
    """Precision/recall@k over every (scene, present category) query pair.

    Each pair draws an unseen sketch from `sketch_split`. `predict` overrides
    the model pipeline: a callable (scene, drawing, category, k) -> rect list,
    used for oracle and baseline scoring.
    """
    model = _as_model(model_or_ckpt)
    indices = dataset.split_indices(scene_split)
    if not indices:
        raise ValueError(f"empty scene split {scene_split!r}")
    if max_scenes is not None:
        indices = indices[:max_scenes]
    rng = np.random.Generator(np.random.PCG64(seed))
    kmax = max(ks)
    ranked: list[list[OrientedRect]] = []
    gts: list[list[OrientedRect]] = []
    cats: list[str] = []
    with threadpool_limits(limits=1):
        for i in indices:
            scene = dataset.load(i)
            for cat in sorted(set(scene.categories())):
                drawing = bank.sample(sketch_split, cat, rng)
                if predict is not None:
                    rects = list(predict(scene, drawing, cat, kmax))
                else:
                    preds = infer_grasps(model, scene.image, drawing, k=kmax, score_thresh=score_thresh)
                    rects = [p.rect for p in preds]
                ranked.append(rects)
                gts.append([g for o in scene.objects if o.category == cat for g in o.grasps])
                cats.append(cat)
    return precision_recall_at_k(ranked, gts, list(ks), cats)


def present_absent_counts(
    model_or_ckpt,
    dataset: Dataset,
    scene_split: str,
    bank: SketchBank,
    sketch_split: str,
    seed: int = 0,
    score_thresh: float = 0.5,
    k: int = 10,
    max_scenes: int | None = None,
) -> tuple[list[int], list[int]]:
    """Counts of confident grasps when the query is present vs absent per scene."""
    model = _as_model(model_or_ckpt)
    vocabulary = sorted(dataset.categories)
    indices = dataset.split_indices(scene_split)
    if max_scenes is not None:
        indices = indices[:max_scenes]
    rng = np.random.Generator(np.random.PCG64(seed))
    present_counts: list[int] = []
    absent_counts: list[int] = []
    with threadpool_limits(limits=1):
        for i in indices:
            scene = dataset.load(i)
            present = sorted(set(scene.categories()))
            absent = [c for c in vocabulary if c not in present]
            if not absent:
                continue
            for pool, out in ((present, present_counts), (absent, absent_counts)):
                cat = pool[int(rng.integers(len(pool)))]
                drawing = bank.sample(sketch_split, cat, rng)
                preds = infer_grasps(model, scene.image, drawing, k=k, score_thresh=score_thresh)
                out.append(len(preds))
    return present_counts, absent_counts


# ---------------------------------------------------------------------------
# inference with arbitrary image sizes


def infer(
    model_or_ckpt,
    image: np.ndarray,
    drawing: RawDrawing,
    k: int,
    score_thresh: float = 0.0,
) -> list[GraspPrediction]:
    """Aspect-pad-resize the image to the model's input size, predict, and map
    grasps back to the original pixel frame."""
    model = _as_model(model_or_ckpt)
    drawing.validate()
    size = model.config.image_size
    h, w = image.shape[:2]
    if (h, w) == (size, size):
        return infer_grasps(model, image, drawing, k=k, score_thresh=score_thresh)
    scale = size / max(h, w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    as_uint8 = np.clip(np.rint(np.asarray(image, dtype=np.float32) * 255.0), 0, 255).astype(np.uint8)
    resized = np.asarray(
        Image.fromarray(as_uint8).resize((nw, nh), Image.BILINEAR), dtype=np.float32
    ) / 255.0
    canvas = np.zeros((size, size, 3), dtype=np.float32)
    canvas[:nh, :nw] = resized
    preds = infer_grasps(model, canvas, drawing, k=k, score_thresh=score_thresh)
    return [
        GraspPrediction(
            rect=OrientedRect(
                x=p.rect.x / scale, y=p.rect.y / scale, w=p.rect.w / scale, h=p.rect.h / scale, theta=p.rect.theta
            ),
            label=p.label,
            score=p.score,
        )
        for p in preds
    ]


# ---------------------------------------------------------------------------
# few-shot harness


def run_few_shot(
    dataset: Dataset,
    bank: SketchBank,
    config: TrainConfig,
    shots=(5, 10, 100),
    seeds=(0, 1, 2),
    scene_split: str = "test",
    sketch_split: str = "testA",
    max_eval_scenes: int | None = None,
    progress=None,
) -> list[dict]:
    """Train graph-encoder and raster-baseline variants at each sketch budget.

    Returns one row per (encoder, shots) cell with per-seed top-1 precision,
    the mean, and half the max-min spread.
    """
    rows: list[dict] = []
    for mode in ("graph", "image"):
        for shot in shots:
            runs: list[float] = []
            sketch_params = None
            for seed in seeds:
                subset = few_shot_subset(bank, shots=shot, seed=derive_seed(seed, shot))
                cfg = replace(config, seed=seed, model=replace(config.model, sketch_mode=mode))
                ckpt = train(cfg, dataset, subset)
                model = model_from_checkpoint(ckpt)
                sketch_params = model.sketch_param_count()
                report = evaluate(
                    model, dataset, scene_split, subset, sketch_split, ks=(1,), seed=seed, max_scenes=max_eval_scenes
                )
                runs.append(report.precision[1])
                if progress is not None:
                    progress({"encoder": mode, "shots": shot, "seed": seed, "p_at_1": report.precision[1]})
            rows.append(
                {
                    "encoder": mode,
                    "shots": shot,
                    "p_at_1_mean": float(np.mean(runs)),
                    "p_at_1_spread": float((max(runs) - min(runs)) / 2),
                    "runs": runs,
                    "sketch_param_count": sketch_params,
                }
            )
    return rows


def format_few_shot_table(rows: list[dict]) -> str:
    """Fixed-width grid: encoders as rows, shot budgets as columns, P@1 cells."""
    shots = sorted({r["shots"] for r in rows})
    encoders = []
    for r in rows:
        if r["encoder"] not in encoders:
            encoders.append(r["encoder"])
    by_cell = {(r["encoder"], r["shots"]): r for r in rows}
    width = 16
    lines = ["Top-1 precision by sketch budget (mean +/- half-spread)"]
    header = "encoder".ljust(12) + "".join(f"{s}-shot".rjust(width) for s in shots)
    header += "params".rjust(12)
    lines.append(header)
    for enc in encoders:
        cells = []
        count = None
        for s in shots:
            row = by_cell[(enc, s)]
            count = row["sketch_param_count"]
            cells.append(f"{row['p_at_1_mean']:.3f} +/- {row['p_at_1_spread']:.3f}".rjust(width))
        lines.append(enc.ljust(12) + "".join(cells) + f"{count:>12}")
    return "\n".join(lines)
