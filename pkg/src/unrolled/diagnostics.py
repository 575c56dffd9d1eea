"""Measurements that probe whether blocks in a stage refine one representation.

The stage target ``A`` is not observable. It is approximated by the output of
the stage's last block, so the estimation error of block ``k`` is
``a^k - a^last`` and the last block's error is zero by definition.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .blocks import Network, forward, lesion, shuffle_stage
from .data import Dataset
from .numerics import Rng
from .train import evaluate

__all__ = [
    "BlockStats",
    "EstimationProfile",
    "LesionReport",
    "ShuffleReport",
    "estimation_error_profile",
    "residual_mean_check",
    "lesion_sweep",
    "shuffle_sweep",
    "kendall_tau_distance",
    "spearman",
    "NoSkipPathError",
]


@dataclass(frozen=True)
class BlockStats:
    mean_error: float
    std_error: float


@dataclass
class EstimationProfile:
    stages: list  # list[list[BlockStats]]

    def rows(self):
        for s, blocks in enumerate(self.stages):
            for b, st in enumerate(blocks):
                yield s, b, st.mean_error, st.std_error

    def to_csv(self, path) -> None:
        _write_csv(path, ["stage", "block", "mean_err", "std_err"], self.rows())


@dataclass
class LesionReport:
    baseline: float
    chance_level: float
    entries: dict = field(default_factory=dict)  # (stage, block) -> accuracy

    def to_csv(self, path) -> None:
        rows = (
            (s, b, acc, self.baseline, self.chance_level)
            for (s, b), acc in sorted(self.entries.items())
        )
        _write_csv(path, ["stage", "block", "accuracy", "baseline", "chance"], rows)


@dataclass
class ShuffleReport:
    stage: int
    baseline: float
    entries: list = field(default_factory=list)  # (perm tuple, tau, accuracy)

    @property
    def taus(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries])

    def trend(self) -> float:
        """Spearman correlation between permutation distance and error increase."""
        return spearman(self.taus, self.baseline - self.accuracies)

    def to_csv(self, path) -> None:
        rows = ((i, tau, acc) for i, (_, tau, acc) in enumerate(self.entries))
        _write_csv(path, ["perm_id", "tau", "accuracy"], rows)


class NoSkipPathError(ValueError):
    pass


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def estimation_error_profile(net: Network, data: Dataset, n_samples: int | None = None) -> EstimationProfile:
    """Per-block mean and std of ``a^k - A`` with ``A`` the stage's last output.

    Mean and standard deviation are taken over samples for each unit and then
    averaged over units.
    """
    if len(data) == 0:
        raise ValueError("estimation profile needs a non-empty dataset")
    n = len(data) if n_samples is None else n_samples
    if not 0 < n <= len(data):
        raise ValueError(f"n_samples must be in [1, {len(data)}]")
    trace = forward(net, data.inputs[:n])
    stages = []
    for s in range(len(net.spec.stages)):
        recs = trace.stage_records(s)
        target = recs[-1].y
        block_stats = []
        for rec in recs:
            err = rec.y - target
            block_stats.append(
                BlockStats(float(err.mean(axis=0).mean()), float(err.std(axis=0).mean()))
            )
        stages.append(block_stats)
    return EstimationProfile(stages)


def residual_mean_check(net: Network, data: Dataset) -> list:
    """Per block ``(stage, block, mean, std)`` of the update ``y - x``."""
    if not any(st.variant.has_skip for st in net.spec.stages):
        raise NoSkipPathError("no skip path: network has only plain blocks")
    trace = forward(net, data.inputs)
    out = []
    for rec in trace.blocks:
        if not net.spec.stages[rec.stage].variant.has_skip:
            continue
        upd = rec.y - rec.x
        out.append((rec.stage, rec.index, float(upd.mean()), float(upd.std())))
    return out


def lesion_sweep(net: Network, data: Dataset) -> LesionReport:
    report = LesionReport(evaluate(net, data).accuracy, 1.0 / data.num_classes)
    for s, st in enumerate(net.spec.stages):
        for b in range(st.blocks):
            report.entries[(s, b)] = evaluate(lesion(net, s, b), data).accuracy
    return report


def kendall_tau_distance(perm) -> int:
    """Number of discordant pairs between ``perm`` and the identity."""
    perm = list(perm)
    return sum(1 for i, j in itertools.combinations(range(len(perm)), 2) if perm[i] > perm[j])


def spearman(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0  # undefined for constant input; report no trend
    return float(stats.spearmanr(x, y).statistic)


def shuffle_sweep(net: Network, data: Dataset, stage: int, n_perms: int, seed: int = 0) -> ShuffleReport:
    """Evaluate the identity order plus ``n_perms`` random orders of one stage."""
    n = net.spec.stages[stage].blocks
    if n < 2:
        raise ValueError(f"stage {stage} has a single block; nothing to shuffle")
    rng = Rng(seed)
    baseline = evaluate(net, data).accuracy
    report = ShuffleReport(stage, baseline, [(tuple(range(n)), 0, baseline)])
    for _ in range(n_perms):
        perm = tuple(int(i) for i in rng.permutation(n))
        acc = evaluate(shuffle_stage(net, stage, perm), data).accuracy
        report.entries.append((perm, kendall_tau_distance(perm), acc))
    return report
