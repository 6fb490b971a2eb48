"""Training loop: per-head losses, epoching, evaluation, checkpointing.

Embeddings are fixed inputs here (the frozen-feature regime); only head
and projection parameters train. One optimizer step per batch, learning
rate from the one-cycle schedule, gradients clipped by global norm.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import EmbeddingBundle, MutationRecord
from .errors import ConfigError, DataError, NumericError
from .heads import Model, build_model
from .metrics import MetricsReport, compute_report
from .optim import AdamState, ClipConfig, OneCycleSchedule, adam_step, \
    clip_global_norm, onecycle_lr
from .tape import Tape

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """All knobs of a training run; defaults are the full-scale recipe."""

    max_lr: float = 1e-5
    epochs: int = 10
    batch_size: int = 8
    clip_max_norm: float = 0.1
    seed: int = 0
    head: str = "ensemble"
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    d_proj: int = 128
    modalities: tuple[str, ...] = ("seq",)
    ln_eps: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    freeze_projection: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_lr <= 0:
            raise ConfigError(f"max_lr must be > 0, got {self.max_lr}")
        if self.d_proj < 1:
            raise ConfigError(f"d_proj must be >= 1, got {self.d_proj}")
        if self.clip_max_norm <= 0:
            raise ConfigError(f"clip_max_norm must be > 0, got {self.clip_max_norm}")
        if len(self.loss_weights) != 3:
            raise ConfigError("loss_weights needs exactly 3 entries")
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        self.modalities = tuple(self.modalities)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossBreakdown:
    """Per-term training losses in (degrees C)^2.

    Single-head runs report their MSE as ``l_head1`` with the other two
    terms zero, so ``l_total == l_head1`` there.
    """

    l_head1: float
    l_head2: float
    l_ensemble: float
    l_total: float

    @classmethod
    def from_components(cls, parts: dict[str, float]) -> "LossBreakdown":
        if "head" in parts:
            return cls(parts["head"], 0.0, 0.0, parts["total"])
        return cls(parts["head1"], parts["head2"], parts["ensemble"],
                   parts["total"])

    def to_dict(self) -> dict:
        return {"l_head1": self.l_head1, "l_head2": self.l_head2,
                "l_ensemble": self.l_ensemble, "l_total": self.l_total}


def compute_losses(y1: float, y2: float, y_ens: float, label: float,
                   weights=(1.0, 1.0, 1.0)) -> LossBreakdown:
    """Per-sample loss terms; the ensemble term carries its 1/2 factor."""
    for name, v in (("y1", y1), ("y2", y2), ("y_ens", y_ens), ("label", label)):
        if not math.isfinite(v):
            raise NumericError(f"non-finite {name}: {v}")
    l1 = (y1 - label) ** 2
    l2 = (y2 - label) ** 2
    le = 0.5 * (y_ens - label) ** 2
    w1, w2, we = weights
    return LossBreakdown(l1, l2, le, w1 * l1 + w2 * l2 + we * le)


@dataclass
class EpochStats:
    epoch: int
    losses: LossBreakdown
    val: MetricsReport | None

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "losses": self.losses.to_dict(),
                "val": self.val.to_dict() if self.val else None}


@dataclass
class PredictionRow:
    protein_id: str
    mutation: str
    label: float
    y1: float
    y2: float
    y_ens: float


@dataclass
class EvalResult:
    report: MetricsReport
    rows: list[PredictionRow]
    skipped: list[str]


@dataclass
class TrainResult:
    model: Model
    history: list[EpochStats]
    adam: AdamState
    steps: int
    train_ids: list[str] = field(default_factory=list)
    val_ids: list[str] = field(default_factory=list)


def _bundle_pair(record: MutationRecord,
                 bundles: dict[str, EmbeddingBundle]):
    return bundles[record.wt_variant_id], bundles[record.mut_variant_id]


def _missing_bundles(records, bundles) -> list[str]:
    missing = []
    for r in records:
        for vid in (r.wt_variant_id, r.mut_variant_id):
            if vid not in bundles:
                missing.append(vid)
    return sorted(set(missing))


def _bundle_width(bundles: dict[str, EmbeddingBundle]) -> int:
    widths = {b.d_raw for b in bundles.values()}
    if len(widths) != 1:
        raise DataError(f"bundles disagree on width: {sorted(widths)}")
    return widths.pop()


def split_sides(records, split: dict[str, str] | None):
    """Partition records by a split manifest; None means train on all."""
    if split is None:
        return list(records), []
    unknown = sorted({r.protein_id for r in records} - set(split))
    if unknown:
        raise DataError(f"proteins missing from split manifest: {unknown[:5]}")
    train = [r for r in records if split[r.protein_id] == "train"]
    val = [r for r in records if split[r.protein_id] == "val"]
    return train, val


def train(records, bundles: dict[str, EmbeddingBundle], config: TrainConfig,
          split: dict[str, str] | None = None,
          checkpoint_path=None) -> TrainResult:
    """Train per config on the train side of ``split``; deterministic per seed."""
    records = list(records)
    if not records:
        raise DataError("empty dataset")
    train_records, val_records = split_sides(records, split)
    if not train_records:
        raise DataError("split leaves no training records")

    missing = _missing_bundles(train_records + val_records, bundles)
    if missing:
        raise DataError(
            f"{len(missing)} variant(s) lack bundles, e.g. {missing[:5]}"
        )

    d_raw = _bundle_width(bundles)
    model = build_model(config.head, d_raw, config.d_proj, config.seed,
                        config.modalities, config.loss_weights, config.ln_eps)
    params = dict(model.named_parameters())
    if config.freeze_projection:
        trainable = {k: v for k, v in params.items() if not k.startswith("proj.")}
        if not trainable:
            raise ConfigError("freeze_projection left nothing to train")
    else:
        trainable = params
    adam = AdamState.init(trainable, config.adam_beta1, config.adam_beta2,
                          config.adam_eps)

    n_train = len(train_records)
    batches_per_epoch = math.ceil(n_train / config.batch_size)
    sched = OneCycleSchedule(config.max_lr, config.epochs * batches_per_epoch,
                             config.pct_start, config.div_factor,
                             config.final_div_factor)
    clip_cfg = ClipConfig(config.clip_max_norm)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))

    history: list[EpochStats] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        epoch_parts: dict[str, float] = {}
        for start in range(0, n_train, config.batch_size):
            batch = [train_records[i] for i in order[start:start + config.batch_size]]
            samples = [(*_bundle_pair(r, bundles), r.dtm) for r in batch]
            tape = Tape()
            loss_node, parts = model.batch_loss(tape, samples)
            if not math.isfinite(parts["total"]):
                ids = [r.mut_variant_id for r in batch]
                raise NumericError(f"non-finite loss on batch {ids}")
            grads = tape.backward(loss_node)
            clipped, _ = clip_global_norm(
                {k: grads[k] for k in trainable}, clip_cfg)
            adam_step(trainable, clipped, adam, onecycle_lr(step, sched))
            step += 1
            for key, v in parts.items():
                epoch_parts[key] = epoch_parts.get(key, 0.0) + v * len(batch)
        mean_parts = {k: v / n_train for k, v in epoch_parts.items()}
        val_report = None
        if val_records:
            try:
                val_report = evaluate(model, val_records, bundles).report
            except NumericError as exc:
                logger.warning("epoch %d: validation metrics undefined (%s)",
                               epoch, exc)
        history.append(EpochStats(epoch, LossBreakdown.from_components(mean_parts),
                                  val_report))

    result = TrainResult(model, history, adam, step,
                         sorted({r.protein_id for r in train_records}),
                         sorted({r.protein_id for r in val_records}))
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, config.to_dict(), adam)
    return result


def evaluate(model: Model, records, bundles: dict[str, EmbeddingBundle],
             skip_missing: bool = True) -> EvalResult:
    """Predict every record and score; missing bundles are listed, never silent.

    Single-head models fill all three prediction columns with their one
    output (an ensemble of one).
    """
    rows: list[PredictionRow] = []
    skipped: list[str] = []
    for r in records:
        absent = [v for v in (r.wt_variant_id, r.mut_variant_id)
                  if v not in bundles]
        if absent:
            if not skip_missing:
                raise DataError(f"missing bundles: {absent}")
            skipped.extend(absent)
            continue
        bw, bm = _bundle_pair(r, bundles)
        if model.kind_name == "ensemble":
            y1, y2, y_ens = model.predict(bw, bm)
        else:
            y = model.predict(bw, bm)
            y1 = y2 = y_ens = y
        rows.append(PredictionRow(r.protein_id, r.mutation.code, r.dtm,
                                  y1, y2, y_ens))
    if skipped:
        logger.warning("skipped %d record(s) with missing bundles", len(skipped))
    if not rows:
        raise DataError("no evaluable records (all bundles missing?)")
    report = compute_report([row.y_ens for row in rows],
                            [row.label for row in rows])
    return EvalResult(report, rows, sorted(set(skipped)))


def evaluate_models(models, records, bundles: dict[str, EmbeddingBundle],
                    skip_missing: bool = True) -> EvalResult:
    """Seed-ensemble evaluation: average predictions over several models.

    Optional alternative to the default two-head ensemble of one model,
    e.g. for models trained with different seeds. Prediction columns are
    the per-model means.
    """
    if not models:
        raise ConfigError("evaluate_models needs at least one model")
    results = [evaluate(m, records, bundles, skip_missing) for m in models]
    base = results[0]
    for other in results[1:]:
        if [(r.protein_id, r.mutation) for r in other.rows] != \
           [(r.protein_id, r.mutation) for r in base.rows]:
            raise DataError("models disagree on evaluable records")
    n = len(models)
    rows = [
        PredictionRow(
            r0.protein_id, r0.mutation, r0.label,
            sum(res.rows[i].y1 for res in results) / n,
            sum(res.rows[i].y2 for res in results) / n,
            sum(res.rows[i].y_ens for res in results) / n,
        )
        for i, r0 in enumerate(base.rows)
    ]
    report = compute_report([r.y_ens for r in rows], [r.label for r in rows])
    return EvalResult(report, rows, base.skipped)
