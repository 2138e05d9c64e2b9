"""Dataset plumbing, Adam, the per-sample training loop and evaluation."""

from __future__ import annotations

import csv
import shlex
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import FBCache, FilteredBasis, ResidualBasis, build_basis, build_residuals
from .filters import FilterConfig
from .image import Image
from .metrics import MetricReport, psnr, ssim
from .model import (
    CompositionModel,
    LOSS_KINDS,
    LossWeights,
    forward,
    gradients,
    init_model,
    model_to_vector,
    vector_to_model,
)
from .noise import add_gaussian_noise, add_impulse_noise
from .pnm import read_image


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization recipe.

    Defaults follow the standard recipe for this model family: 250 epochs,
    batch size 1, Adam from learning rate 0.1 divided by 5 every 50 epochs,
    loss weights (0.1, 0.1, 1.0).
    """

    epochs: int = 250
    batch_size: int = 1
    lr0: float = 0.1
    lr_divisor: float = 5.0
    lr_period: int = 50
    loss: LossWeights = LossWeights()
    loss_kind: str = "mse"
    tv_weight: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.lr0 > 0):
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not (self.lr_divisor > 1):
            raise ValueError(f"lr_divisor must be > 1, got {self.lr_divisor}")
        if self.lr_period < 1:
            raise ValueError(f"lr_period must be >= 1, got {self.lr_period}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")


def lr_at(epoch: int, cfg: TrainingConfig) -> float:
    """Step schedule: lr0 / divisor**(epoch // period)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 / cfg.lr_divisor ** (epoch // cfg.lr_period)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(n_params: int) -> "AdamState":
        return AdamState(np.zeros(n_params), np.zeros(n_params), 0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("adam_step: parameter/gradient/state shapes disagree")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return new_params, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """One training pair: the degraded model input and its clean target."""

    sample_id: str
    degraded: Image
    clean: Image

    def __post_init__(self):
        if self.degraded.shape != self.clean.shape:
            raise ValueError(
                f"sample {self.sample_id!r}: degraded {self.degraded.shape} "
                f"vs clean {self.clean.shape}"
            )


def derive_seed(global_seed: int, index: int) -> int:
    """Stable per-sample seed stream: SeedSequence([global_seed, index])."""
    return int(np.random.SeedSequence([int(global_seed), int(index)]).generate_state(1)[0])


@dataclass(frozen=True)
class PairEntry:
    input_path: str
    target_path: str


@dataclass(frozen=True)
class RecipeEntry:
    clean_path: str
    kind: str  # "gaussian" (sigma on 0-255 scale) or "impulse" (density)
    amount: float


@dataclass(frozen=True)
class DatasetSpec:
    """Declarative pair list plus the train/validation split fraction.

    Manifest format (one entry per line, '#' comments, paths relative to the
    manifest)::

        split 0.1
        pair noisy/01.pgm clean/01.pgm
        clean clean/02.pgm gaussian 25
        clean clean/03.pgm impulse 0.4
    """

    entries: tuple
    val_fraction: float = 0.1
    base_dir: str = "."

    @staticmethod
    def read(path) -> "DatasetSpec":
        manifest = Path(path)
        entries: list = []
        val_fraction = 0.1
        for lineno, raw in enumerate(manifest.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = shlex.split(line)
            where = f"{manifest}:{lineno}"
            if tokens[0] == "split" and len(tokens) == 2:
                val_fraction = float(tokens[1])
                if not 0.0 <= val_fraction < 1.0:
                    raise ValueError(f"{where}: split must lie in [0, 1)")
            elif tokens[0] == "pair" and len(tokens) == 3:
                entries.append(PairEntry(tokens[1], tokens[2]))
            elif tokens[0] == "clean" and len(tokens) == 4:
                kind = tokens[2]
                if kind not in ("gaussian", "impulse"):
                    raise ValueError(f"{where}: unknown degradation {kind!r}")
                entries.append(RecipeEntry(tokens[1], kind, float(tokens[3])))
            else:
                raise ValueError(f"{where}: unrecognized manifest line {line!r}")
        if not entries:
            raise ValueError(f"dataset manifest {manifest} lists no samples")
        return DatasetSpec(tuple(entries), val_fraction, str(manifest.parent))

    def load(self, seed: int = 0) -> list[Sample]:
        """Read every entry; degradation recipes synthesize noise once per
        sample with a seed derived from (seed, entry index)."""
        base = Path(self.base_dir)
        samples = []
        for index, entry in enumerate(self.entries):
            if isinstance(entry, PairEntry):
                degraded = read_image(base / entry.input_path)
                clean = read_image(base / entry.target_path)
                sample_id = entry.input_path
            else:
                clean = read_image(base / entry.clean_path)
                sample_seed = derive_seed(seed, index)
                if entry.kind == "gaussian":
                    degraded = add_gaussian_noise(clean, entry.amount, sample_seed)
                else:
                    degraded = add_impulse_noise(clean, entry.amount, sample_seed)
                sample_id = entry.clean_path
            samples.append(Sample(sample_id, degraded, clean))
        return samples


def split_validation(samples: Sequence[Sample], val_fraction: float) -> tuple[list, list]:
    """Hold out the trailing fraction; an empty holdout validates on the
    training set itself (tiny datasets)."""
    samples = list(samples)
    n_val = min(int(len(samples) * val_fraction), len(samples) - 1)
    if n_val <= 0:
        return samples, list(samples)
    return samples[: len(samples) - n_val], samples[len(samples) - n_val :]


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_psnr: float


@dataclass(frozen=True, eq=False)
class TrainHistory:
    records: tuple[EpochRecord, ...]
    best_epoch: int
    best_val_psnr: float
    best_model: CompositionModel


def history_to_csv(history: TrainHistory, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "lr", "train_loss", "val_psnr"])
        for rec in history.records:
            writer.writerow([rec.epoch, repr(rec.lr), repr(rec.train_loss), repr(rec.val_psnr)])


@dataclass(frozen=True, eq=False)
class _Prepared:
    sample: Sample
    basis: FilteredBasis
    residuals: ResidualBasis
    artifact: np.ndarray  # degraded - clean, signed


def _prepare(
    samples: Sequence[Sample],
    configs: Sequence[FilterConfig],
    threads: int,
    cache: FBCache | None,
) -> list[_Prepared]:
    def one(sample: Sample) -> _Prepared:
        basis = build_basis(sample.degraded, configs, threads=1, cache=cache)
        residuals = build_residuals(basis)
        artifact = sample.degraded.data - sample.clean.data
        return _Prepared(sample, basis, residuals, artifact)

    items = list(samples)
    if threads <= 1 or len(items) <= 1:
        return [one(s) for s in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, items))


def _mean_merged_psnr(model: CompositionModel, prepared: Sequence[_Prepared]) -> float:
    values = []
    for prep in prepared:
        out = forward(model, prep.basis, prep.residuals)
        values.append(psnr(out.merged_image(), prep.sample.clean))
    return float(np.mean(values))


def train(
    samples: Sequence[Sample],
    basis_configs: Sequence[FilterConfig],
    cfg: TrainingConfig = TrainingConfig(),
    val_samples: Sequence[Sample] | None = None,
    val_fraction: float = 0.1,
    threads: int = 1,
    cache: FBCache | None = None,
) -> tuple[CompositionModel, TrainHistory]:
    """Adam-train a composition model; returns (final_model, history).

    One optimizer step per ``batch_size`` samples (default 1: one step per
    sample).  The epoch order reshuffles from the seeded generator when
    ``cfg.shuffle``; the whole run is deterministic given (sample order,
    cfg.seed) and independent of ``threads``, which only parallelizes basis
    construction.  Without an explicit validation set the trailing
    ``val_fraction`` of samples is held out.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("training needs at least one sample")
    if val_samples is None:
        train_part, val_part = split_validation(samples, val_fraction)
    else:
        train_part, val_part = samples, list(val_samples)
        if not val_part:
            raise ValueError("explicit validation set is empty")

    prep_train = _prepare(train_part, basis_configs, threads, cache)
    prep_val = _prepare(val_part, basis_configs, threads, cache)

    model = init_model(basis_configs)
    params = model_to_vector(model)
    state = AdamState.zeros(params.size)
    rng = np.random.default_rng(cfg.seed)

    records = []
    best_psnr = -np.inf
    best_epoch = -1
    best_params = params.copy()
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        if cfg.shuffle:
            order = rng.permutation(len(prep_train))
        else:
            order = np.arange(len(prep_train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            grad_vec = np.zeros_like(params)
            loss_sum = 0.0
            for idx in chunk:
                prep = prep_train[idx]
                loss, grads = gradients(
                    model,
                    prep.basis,
                    prep.residuals,
                    prep.sample.clean,
                    prep.artifact,
                    cfg.loss,
                    cfg.loss_kind,
                    cfg.tv_weight,
                )
                grad_vec += grads.as_vector()
                loss_sum += loss
            grad_vec /= len(chunk)
            params, state = adam_step(
                params, grad_vec, state, lr, cfg.beta1, cfg.beta2, cfg.epsilon
            )
            model = vector_to_model(params, basis_configs)
            losses.append(loss_sum / len(chunk))
        val_psnr = _mean_merged_psnr(model, prep_val)
        records.append(EpochRecord(epoch, lr, float(np.mean(losses)), val_psnr))
        if val_psnr > best_psnr:
            best_psnr = val_psnr
            best_epoch = epoch
            best_params = params.copy()

    history = TrainHistory(
        tuple(records),
        best_epoch,
        float(best_psnr),
        vector_to_model(best_params, basis_configs),
    )
    return model, history


def evaluate(
    model: CompositionModel,
    samples: Sequence[Sample],
    threads: int = 1,
    cache: FBCache | None = None,
    output: str = "merged",
) -> MetricReport:
    """Score the model on (degraded, clean) pairs.

    Builds the basis per sample, runs the forward pass, clamps the selected
    output and reports PSNR/SSIM per image plus the means.  ``output`` is
    "merged" (default) or "content" (content branch only, for ablations).
    """
    if output not in ("merged", "content"):
        raise ValueError(f"output must be 'merged' or 'content', got {output!r}")
    prepared = _prepare(list(samples), model.basis_configs, threads, cache)
    rows = []
    for prep in prepared:
        out = forward(model, prep.basis, prep.residuals)
        img = out.merged_image() if output == "merged" else out.content_image()
        rows.append(
            (prep.sample.sample_id, psnr(img, prep.sample.clean), ssim(img, prep.sample.clean))
        )
    return MetricReport.from_rows(rows)


# ---------------------------------------------------------------------------
# Residual-branch ablation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationReport:
    """Validation PSNR with the full objective vs the content-only arm."""

    dual_branch_psnr: float
    content_only_psnr: float

    @property
    def gap(self) -> float:
        return self.dual_branch_psnr - self.content_only_psnr


def ablate_residual(
    samples: Sequence[Sample],
    basis_configs: Sequence[FilterConfig],
    cfg: TrainingConfig = TrainingConfig(),
    val_samples: Sequence[Sample] | None = None,
    val_fraction: float = 0.1,
    threads: int = 1,
    cache: FBCache | None = None,
) -> AblationReport:
    """Train twice under identical seeds and data order: the full objective
    and a content-only arm (lam = gamma = 0, scored on the clamped content
    output).  Any PSNR difference is attributable to the objective."""
    samples = list(samples)
    if val_samples is None:
        train_part, val_part = split_validation(samples, val_fraction)
    else:
        train_part, val_part = samples, list(val_samples)

    content_cfg = replace(cfg, loss=LossWeights(cfg.loss.alpha, 0.0, 0.0))
    model_dual, _ = train(
        train_part, basis_configs, cfg, val_samples=val_part, threads=threads, cache=cache
    )
    model_content, _ = train(
        train_part, basis_configs, content_cfg, val_samples=val_part, threads=threads, cache=cache
    )
    dual = evaluate(model_dual, val_part, threads=threads, cache=cache, output="merged")
    content = evaluate(model_content, val_part, threads=threads, cache=cache, output="content")
    return AblationReport(dual.psnr, content.psnr)
