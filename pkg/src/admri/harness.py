"""Training, evaluation, and the repeated-experiment matrix.

One experiment row = one dataset variant (optionally balanced), trained
``repeats`` times with derived seeds; the report lists per-run and mean
test accuracies next to the reference accuracies from the original
access-controlled cohort. All outputs (report, per-epoch CSVs,
checkpoints) are deterministic byte-for-byte for a fixed config and seed.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .dataset import (
    PIXEL_SCALE,
    Dataset,
    SliceRecord,
    balance_dataset,
    batch_iter,
    count_manifest_keys,
    read_dataset,
    split_dataset,
)
from .errors import DataError, NumericError
from .hashing import fnv1a64, mix64
from .nn import KERNEL_BACKEND, network, ops
from .optim import init_velocity, lr_at, sgd_step
from .preprocess import extract_slices, gaussian_smooth3d, quantize_slice, resize_bilinear

# Seed-stream tags (arbitrary fixed constants; see hashing.mix64)
STREAM_INIT = 1
STREAM_EPOCH = 2
STREAM_SPLIT = 3
STREAM_BALANCE = 4

# Mean test accuracies previously reported for the original ADNI cohort
# (per dataset variant; the inception-style column is cited for context
# only and is not reproduced by this package).
REFERENCE_LENET = {
    "Structural MRI 0": 0.97446,
    "Structural MRI 2": 0.98566,
    "Structural MRI 3": 0.9879,
    "Structural MRI 4": 0.98672,
    "B. Structural MRI 0": 0.9572,
    "B. Structural MRI 2": 0.975,
    "B. Structural MRI 3": 0.9781,
    "B. Structural MRI 4": 0.9746,
}
REFERENCE_GOOGLENET = {
    "Structural MRI 0": 0.845043,
    "Structural MRI 2": 0.98452,
    "Structural MRI 3": 0.988431,
    "Structural MRI 4": 0.987758,
}


@dataclass
class EpochMetrics:
    test_accuracy: float
    test_loss: float
    train_loss: float
    lr: float
    seconds: float = 0.0  # wall clock; never serialized


@dataclass
class MetricsHistory:
    epochs: list = field(default_factory=list)

    def append(self, metrics: EpochMetrics) -> None:
        if not 0.0 <= metrics.test_accuracy <= 1.0:
            raise ValueError(f"accuracy {metrics.test_accuracy} outside [0, 1]")
        self.epochs.append(metrics)

    @property
    def final_accuracy(self) -> float:
        if not self.epochs:
            raise ValueError("empty history")
        return self.epochs[-1].test_accuracy

    def __len__(self) -> int:
        return len(self.epochs)


@dataclass
class RowResult:
    label: str
    run_accuracies: list
    run_subject_accuracies: list

    @property
    def mean_accuracy(self) -> float:
        return sum(self.run_accuracies) / len(self.run_accuracies)

    @property
    def mean_subject_accuracy(self) -> float:
        return sum(self.run_subject_accuracies) / len(self.run_subject_accuracies)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list


def build_dataset_from_volumes(volumes, variant: int, drop_last: int = 10,
                               extra_manifest: dict | None = None) -> Dataset:
    """Run the slice pipeline for one smoothing variant over labeled volumes.

    variant 0 skips smoothing; 2/3/4 smooth with that sigma in mm. Slices
    are extracted, resized to 28x28, quantized, and collected in subject
    order (volume list order, then axial index).
    """
    records = []
    for volume in volumes:
        if volume.class_label is None:
            raise DataError(f"volume for subject {volume.subject_id} has no class label")
        vol = gaussian_smooth3d(volume, float(variant)) if variant else volume
        for slc in extract_slices(vol, drop_last=drop_last):
            resized = resize_bilinear(slc, 28, 28)
            records.append(
                SliceRecord(
                    label=volume.class_label,
                    subject_id=volume.subject_id,
                    axial_index=slc.axial_index,
                    variant=variant,
                    pixels=quantize_slice(resized),
                )
            )
    if not records:
        raise DataError("pipeline produced no slices")
    manifest = dict(extra_manifest or {})
    manifest.update(count_manifest_keys(records))
    manifest.setdefault("variant", str(variant))
    manifest.setdefault("drop_last", str(drop_last))
    manifest.setdefault("filter_order", "drop_then_filter")
    manifest.setdefault("quantization", "per_slice_minmax")
    return Dataset(records=records, manifest=manifest)


def train(config: ExperimentConfig, train_set: Dataset, test_set: Dataset,
          seed: int | None = None, num_classes: int = 2):
    """Train for config.epochs; returns (params, MetricsHistory).

    The iteration counter is global across epochs and drives the step
    learning-rate schedule. Raises NumericError if a batch loss goes
    non-finite.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise DataError("train and test sets must be non-empty")
    run_seed = config.seed if seed is None else seed
    spec = config.layer_spec(num_classes=num_classes)
    params = network.init_params(spec, mix64(run_seed, STREAM_INIT))
    velocity = init_velocity(params)
    sgd_config = config.sgd()
    history = MetricsHistory()
    iteration = 0
    for epoch in range(config.epochs):
        tic = time.perf_counter()
        epoch_seed = mix64(run_seed, STREAM_EPOCH, epoch)
        loss_sum = 0.0
        sample_count = 0
        for x, y in batch_iter(train_set, config.batch_size, epoch_seed):
            logits, cache = network.forward(params, x)
            grads, mean_loss = network.backward(params, cache, y)
            if not np.isfinite(mean_loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, iteration {iteration}"
                )
            params, velocity = sgd_step(params, grads, velocity, sgd_config, iteration)
            iteration += 1
            loss_sum += mean_loss * len(y)
            sample_count += len(y)
        accuracy, test_loss = evaluate(params, test_set)
        history.append(
            EpochMetrics(
                test_accuracy=accuracy,
                test_loss=test_loss,
                train_loss=loss_sum / sample_count,
                lr=lr_at(iteration, sgd_config),
                seconds=time.perf_counter() - tic,
            )
        )
    return params, history


def _dataset_batches(dataset: Dataset, chunk: int = 256):
    scale = np.float32(PIXEL_SCALE)
    for start in range(0, len(dataset), chunk):
        records = dataset.records[start : start + chunk]
        pixels = np.stack([r.pixels for r in records]).astype(np.float32) * scale
        labels = np.array([r.label for r in records], dtype=np.int64)
        yield pixels[:, None, :, :], labels, records


def evaluate(params, dataset: Dataset):
    """(accuracy, mean cross-entropy loss) over the dataset in stored order."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    correct = 0
    loss_sum = 0.0
    for x, y, _ in _dataset_batches(dataset):
        logits = network.forward_logits(params, x)
        correct += int((logits.argmax(axis=1) == y).sum())
        for i in range(len(y)):
            loss_sum += ops.softmax_cross_entropy(logits[i], int(y[i])).loss
    return correct / len(dataset), loss_sum / len(dataset)


def subject_vote_accuracy(params, dataset: Dataset) -> float:
    """Per-subject accuracy: majority vote over each subject's slice predictions.

    Supplementary to the slice-level accuracy; vote ties count as wrong.
    """
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    votes: dict = {}
    for x, y, records in _dataset_batches(dataset):
        predicted = network.forward_logits(params, x).argmax(axis=1)
        for record, pred in zip(records, predicted):
            entry = votes.setdefault(record.subject_id, [0, 0, record.label])
            entry[int(pred)] += 1
    correct = 0
    for nc_votes, ad_votes, label in votes.values():
        majority = 1 if ad_votes > nc_votes else (0 if nc_votes > ad_votes else -1)
        correct += int(majority == label)
    return correct / len(votes)


def _run_row(config: ExperimentConfig, dataset: Dataset, balanced: bool, label: str):
    accuracies = []
    subject_accuracies = []
    histories = []
    checkpoints = []
    for run in range(config.repeats):
        run_seed = config.seed + run  # auditable repeat-seed derivation
        working = dataset
        if balanced:
            nc, ad = working.class_counts()
            target = config.balance_target or min(nc, ad)
            working = balance_dataset(working, target, seed=mix64(run_seed, STREAM_BALANCE))
        train_set, test_set = split_dataset(
            working,
            test_fraction=config.test_fraction,
            seed=mix64(run_seed, STREAM_SPLIT),
            subject_level=config.subject_level_split,
        )
        params, history = train(config, train_set, test_set, seed=run_seed)
        accuracies.append(history.final_accuracy)
        subject_accuracies.append(subject_vote_accuracy(params, test_set))
        histories.append(history)
        checkpoints.append(params)
    return RowResult(label, accuracies, subject_accuracies), histories, checkpoints


def run_experiment(config: ExperimentConfig, dataset_loader=None):
    """Run the full variant x {original, balanced} matrix.

    Returns (ExperimentReport, artifacts) where artifacts maps relative
    file names to per-run histories and checkpoints for the caller to
    persist. ``dataset_loader`` (variant -> Dataset) defaults to reading
    ``config.dataset_path(variant)`` and exists for in-memory callers.
    """
    if dataset_loader is None:
        def dataset_loader(variant: int) -> Dataset:
            path = config.dataset_path(variant)
            try:
                return read_dataset(path)
            except FileNotFoundError:
                raise DataError(
                    f"dataset for variant {variant} not found at {path}"
                ) from None

    rows = []
    artifacts = {}
    for variant in config.variants:
        dataset = dataset_loader(variant)
        modes = [(False, f"Structural MRI {variant}")]
        if config.balanced:
            modes.append((True, f"B. Structural MRI {variant}"))
        for balanced, label in modes:
            row, histories, checkpoints = _run_row(config, dataset, balanced, label)
            rows.append(row)
            tag = f"mri{variant}_bal" if balanced else f"mri{variant}"
            for run, (history, params) in enumerate(zip(histories, checkpoints)):
                artifacts[f"metrics_{tag}_run{run}.csv"] = history
                artifacts[f"model_{tag}_run{run}.ckpt"] = params
    return ExperimentReport(config=config, rows=rows), artifacts


def format_report(report: ExperimentReport) -> str:
    """Deterministic text rendering of the accuracy matrix."""
    cfg = report.config
    runs_width = max(9 * len(row.run_accuracies) for row in report.rows)
    lines = [
        "# experiment report",
        f"# kernels={KERNEL_BACKEND}",
        f"# epochs={cfg.epochs} repeats={cfg.repeats} batch_size={cfg.batch_size} "
        f"seed={cfg.seed} test_fraction={cfg.test_fraction}",
        f"# base_lr={cfg.base_lr} momentum={cfg.momentum} weight_decay={cfg.weight_decay} "
        f"gamma={cfg.gamma} stepsize={cfg.stepsize}",
        f"# split={'subject' if cfg.subject_level_split else 'slice'} "
        f"hidden_units={cfg.hidden_units}",
        "",
        f"{'dataset':<22}{'architecture':<15}{'runs':<{runs_width}}"
        f"{'mean':<10}{'subj_mean':<11}{'ref_lenet':<11}{'ref_googlenet'}",
    ]
    for row in report.rows:
        runs = " ".join(f"{a:.6f}" for a in row.run_accuracies)
        ref_lenet = REFERENCE_LENET.get(row.label)
        ref_goog = REFERENCE_GOOGLENET.get(row.label)
        lines.append(
            f"{row.label:<22}{'Adopted LeNet':<15}"
            f"{runs:<{runs_width}}"
            f"{row.mean_accuracy:<10.6f}{row.mean_subject_accuracy:<11.6f}"
            f"{(f'{ref_lenet:.6f}' if ref_lenet is not None else '-'):<11}"
            f"{f'{ref_goog:.6f}' if ref_goog is not None else '-'}"
        )
    return "\n".join(lines) + "\n"


def report_metrics(history: MetricsHistory, path) -> None:
    """Write the per-epoch CSV: epoch,test_accuracy,test_loss,train_loss,lr."""
    if len(history) == 0:
        raise ValueError("refusing to write an empty metrics history")
    rows = ["epoch,test_accuracy,test_loss,train_loss,lr"]
    for epoch, m in enumerate(history.epochs, start=1):
        rows.append(
            f"{epoch},{m.test_accuracy:.6f},{m.test_loss:.6f},{m.train_loss:.6f},{m.lr:.6f}"
        )
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def checkpoint_digest(path) -> int:
    """FNV-1a of a file's bytes; used to confirm evaluation never mutates params."""
    with open(path, "rb") as fh:
        return fnv1a64(fh.read())
