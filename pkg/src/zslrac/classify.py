"""Calibrated nearest-prototype prediction and zero-shot evaluation metrics."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .data import Dataset


@dataclass(frozen=True)
class PrototypeSet:
    """One prototype row per class, stored sorted by class id.

    Sorting makes "lowest index wins" in the nearest-neighbor kernel the
    same as "lowest class id wins".
    """

    prototypes: np.ndarray
    class_ids: np.ndarray
    seen_mask: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.prototypes, dtype=np.float64))
        ids = np.asarray(self.class_ids, dtype=np.int64)
        mask = np.asarray(self.seen_mask, dtype=bool)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("prototype class ids must be unique")
        if not (len(ids) == len(mask) == p.shape[0]):
            raise ValueError("prototypes, class_ids and seen_mask lengths differ")
        order = np.argsort(ids, kind="stable")
        object.__setattr__(self, "prototypes", p[order])
        object.__setattr__(self, "class_ids", ids[order])
        object.__setattr__(self, "seen_mask", mask[order])

    def __len__(self):
        return len(self.class_ids)

    def restrict(self, keep):
        keep = np.asarray(keep, dtype=bool)
        return PrototypeSet(self.prototypes[keep], self.class_ids[keep], self.seen_mask[keep])

    def unseen_only(self):
        return self.restrict(~self.seen_mask)

    def index_of(self, class_id):
        return int(np.flatnonzero(self.class_ids == class_id)[0])


@dataclass(frozen=True)
class CalibrationConfig:
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def _scales(p: PrototypeSet, cal: CalibrationConfig):
    return np.where(p.seen_mask, float(cal.gamma), 1.0)


def nearest(points, p: PrototypeSet, cal: CalibrationConfig = CalibrationConfig()):
    """``(prototype index, calibrated distance)`` for each row of ``points``.

    Seen-class distances are multiplied by ``gamma``; unseen are not.
    """
    if len(p) == 0:
        raise ValueError("empty prototype set")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != p.prototypes.shape[1]:
        raise ValueError(f"point dimension {points.shape[1]} != prototype dimension "
                         f"{p.prototypes.shape[1]}")
    return _backend.nearest_scaled(points, p.prototypes, _scales(p, cal))


def predict(x, p: PrototypeSet, cal: CalibrationConfig = CalibrationConfig()):
    idx, _ = nearest(np.atleast_2d(x), p, cal)
    return int(p.class_ids[idx[0]])


def predict_many(points, p: PrototypeSet, cal: CalibrationConfig = CalibrationConfig()):
    idx, dist = nearest(points, p, cal)
    return p.class_ids[idx], dist


def predict_conventional(x, p: PrototypeSet):
    """Plain 1-NN restricted to the unseen prototypes."""
    return predict(x, p.unseen_only(), CalibrationConfig())


def classwise_accuracy(true, pred, classes=None):
    """Per-class accuracy and its unweighted mean.

    ``classes`` lists the classes to score (default: those present in
    ``true``); requested classes with no samples are dropped with a warning.
    """
    true = np.asarray(true)
    pred = np.asarray(pred)
    if classes is None:
        classes = np.unique(true).tolist()
    per_class = {}
    for c in classes:
        mask = true == c
        if not mask.any():
            warnings.warn(f"class {c} has no samples; excluded from accuracy", stacklevel=2)
            continue
        per_class[int(c)] = float(np.mean(pred[mask] == c))
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def harmonic_mean(acc_s, acc_u):
    if acc_s + acc_u == 0:
        return 0.0
    return 2.0 * acc_s * acc_u / (acc_s + acc_u)


def n1_histogram(points, p: PrototypeSet, cal: CalibrationConfig = CalibrationConfig()):
    """How often each prototype is the (calibrated) nearest neighbor."""
    points = np.atleast_2d(points)
    if points.shape[0] == 0:
        raise ValueError("no query points")
    idx, _ = nearest(points, p, cal)
    return np.bincount(idx, minlength=len(p))


def hubness_skewness(hist):
    """Population skewness ``m3 / m2**1.5`` of the histogram counts (0 if flat)."""
    counts = np.asarray(hist, dtype=np.float64)
    if counts.size == 0:
        raise ValueError("empty histogram")
    dev = counts - counts.mean()
    m2 = np.mean(dev ** 2)
    if m2 == 0:
        return 0.0
    return float(np.mean(dev ** 3) / m2 ** 1.5)


@dataclass
class EvalReport:
    acc_per_class: dict
    acc_seen: float
    acc_unseen: float
    harmonic_mean: float
    acc_conventional: float
    hubness_skewness: float
    n1_histogram: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "tr": self.acc_conventional,
            "u": self.acc_unseen,
            "s": self.acc_seen,
            "H": self.harmonic_mean,
            "hubness_skewness": self.hubness_skewness,
            "acc_per_class": {str(k): v for k, v in self.acc_per_class.items()},
            "n1_histogram": {str(k): int(v) for k, v in self.n1_histogram.items()},
            "config": self.config_echo,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


@dataclass
class Predictions:
    """Raw per-sample predictions for one search setting."""

    sample_ids: np.ndarray
    true: np.ndarray
    pred: np.ndarray
    distance: np.ndarray

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "true_class", "pred_class", "distance"])
            for row in zip(self.sample_ids.tolist(), self.true.tolist(),
                           self.pred.tolist(), self.distance.tolist()):
                w.writerow([row[0], row[1], row[2], repr(row[3])])

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k, t: np.array([t(r[k]) for r in rows], dtype=t)
        return cls(col("sample_id", np.int64), col("true_class", np.int64),
                   col("pred_class", np.int64), col("distance", np.float64))


def evaluate(test: Dataset, p: PrototypeSet, cal: CalibrationConfig = CalibrationConfig(),
             config_echo=None):
    """Generalized and conventional accuracies, H and hubness on ``test``.

    Returns ``(EvalReport, generalized Predictions, conventional Predictions)``.
    Hubness is the skewness of the N1 histogram of the unseen-class test
    samples over the full (calibrated) prototype set.
    """
    m = test.manifest
    missing = set(np.unique(test.labels).tolist()) - set(p.class_ids.tolist())
    if missing:
        raise ValueError(f"no prototypes for test classes {sorted(missing)}")
    seen = [c for c in m.seen_class_ids if np.any(test.labels == c)]
    unseen = [c for c in m.unseen_class_ids if np.any(test.labels == c)]

    pred, dist = predict_many(test.features, p, cal)
    gen = Predictions(test.sample_ids, test.labels, pred, dist)
    per_seen, acc_s = classwise_accuracy(test.labels, pred, seen)
    per_unseen, acc_u = classwise_accuracy(test.labels, pred, unseen)

    umask = np.isin(test.labels, unseen)
    unseen_p = p.unseen_only()
    if umask.any():
        cpred, cdist = predict_many(test.features[umask], unseen_p)
        _, acc_tr = classwise_accuracy(test.labels[umask], cpred, unseen)
        hist = n1_histogram(test.features[umask], p, cal)
        skew = hubness_skewness(hist)
    else:
        cpred, cdist = np.empty(0, np.int64), np.empty(0)
        acc_tr, skew, hist = 0.0, 0.0, np.zeros(len(p), dtype=np.int64)
    conv = Predictions(test.sample_ids[umask], test.labels[umask], cpred, cdist)

    report = EvalReport(
        acc_per_class={**per_seen, **per_unseen},
        acc_seen=acc_s,
        acc_unseen=acc_u,
        harmonic_mean=harmonic_mean(acc_s, acc_u),
        acc_conventional=acc_tr,
        hubness_skewness=skew,
        n1_histogram=dict(zip(p.class_ids.tolist(), hist.tolist())),
        config_echo=dict(config_echo or {}),
    )
    return report, gen, conv
