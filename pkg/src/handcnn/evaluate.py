"""Accuracy evaluation: per-fold cross-validation and the all-positive test.

The cross-validation report carries the mean and the sample standard
deviation (divide by k-1) of the per-fold accuracies, plus everything
needed to re-run any single fold bit-for-bit: the hyperparameters and the
per-fold seed (master seed + fold index).

The positive test evaluates a trained model on an all-hand set from a
different domain; its result is a true-positive rate.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data, network, train
from .errors import HandcnnError, UsageError


@dataclass
class EvalReport:
    network_id: str
    k: int
    per_fold_accuracy: list
    fold_seeds: list
    n_test_per_fold: list
    mean: float
    std: float
    hyperparams: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"network: {self.network_id}",
            f"folds: {self.k}",
            f"mean_accuracy: {self.mean:.6f}",
            f"std_accuracy: {self.std:.6f}",
            "",
            "fold  accuracy  n_test  seed",
        ]
        for i, (acc, n, seed) in enumerate(
            zip(self.per_fold_accuracy, self.n_test_per_fold, self.fold_seeds)
        ):
            lines.append(f"{i:4d}  {acc:.6f}  {n:6d}  {seed}")
        lines.append("")
        for key in sorted(self.hyperparams):
            lines.append(f"hyperparams.{key}={self.hyperparams[key]}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write("fold,accuracy,seed\n")
            for i, (acc, seed) in enumerate(zip(self.per_fold_accuracy, self.fold_seeds)):
                f.write(f"{i},{acc!r},{seed}\n")


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax matches the label argmax (ties -> lowest index)."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape[0] != labels.shape[0]:
        raise UsageError(f"{probs.shape[0]} predictions vs {labels.shape[0]} labels")
    if probs.shape[0] < 1:
        raise UsageError("need at least one prediction")
    predicted = np.argmax(probs, axis=1)
    wanted = np.argmax(labels, axis=1)
    return float(np.mean(predicted == wanted))


def predict_probs(model: network.ModelState, pixels: np.ndarray, chunk: int = 128) -> np.ndarray:
    """Inference probabilities, batched so big sets do not blow up memory."""
    outs = []
    for start in range(0, pixels.shape[0], chunk):
        probs, _ = network.forward(model, pixels[start:start + chunk], training=False)
        outs.append(probs)
    return np.concatenate(outs, axis=0)


def evaluate_samples(model: network.ModelState, samples) -> float:
    pixels, labels = data.stack_samples(samples)
    return accuracy(predict_probs(model, pixels), labels)


def sample_std(values) -> float:
    if len(values) < 2:
        return 0.0
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / (len(values) - 1))


def _run_fold(args):
    """One fold as an independent experiment (safe to run in a worker process)."""
    (fold_idx, spec, h, pixels, labels, train_idx, test_idx, checkpoint_dir) = args
    fold_seed = h.seed + fold_idx
    h_fold = h.with_overrides(seed=fold_seed)
    train_samples = [data.Sample(pixels[i], labels[i]) for i in train_idx]
    try:
        state, _ = train.train(spec, train_samples, h_fold)
        probs = predict_probs(state, pixels[test_idx])
        acc = accuracy(probs, labels[test_idx])
    except HandcnnError as exc:
        raise type(exc)(f"fold {fold_idx}: {exc}") from exc
    if checkpoint_dir is not None:
        train.save_checkpoint(state, Path(checkpoint_dir) / f"fold{fold_idx}.hfck")
    return fold_idx, acc, fold_seed, len(test_idx)


def cross_validate(entries, spec: network.NetworkSpec, h: train.Hyperparams, k: int = 10,
                   root=None, jobs: int = 1, checkpoint_dir: str | None = None) -> EvalReport:
    """Train and score one model per fold; aggregate mean and sample std.

    Folds are independent experiments: results are assembled by fold index
    and do not depend on ``jobs``.
    """
    h.validate()
    samples = data.decode_all(entries, root)
    pixels, labels = data.stack_samples(samples)
    plan = data.make_folds(len(entries), k, [e.label for e in entries], h.seed)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    tasks = [
        (i, spec, h, pixels, labels, train_idx, test_idx, checkpoint_dir)
        for i, (train_idx, test_idx) in enumerate(plan.folds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    accs = [r[1] for r in results]
    return EvalReport(
        network_id=spec.id,
        k=k,
        per_fold_accuracy=accs,
        fold_seeds=[r[2] for r in results],
        n_test_per_fold=[r[3] for r in results],
        mean=sum(accs) / len(accs),
        std=sample_std(accs),
        hyperparams=asdict(h),
    )


def positive_test(model: network.ModelState, samples) -> float:
    """True-positive rate on an all-hand set; any other label is a protocol error."""
    for i, sample in enumerate(samples):
        if int(np.argmax(sample.label)) != 1:
            raise UsageError(f"positive test requires all-hand labels; sample {i} is not hand")
    return evaluate_samples(model, samples)
