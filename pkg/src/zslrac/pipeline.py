"""Glue between training, adaptation and evaluation.

Variants follow the ablation naming: ``R`` (structural training only),
``RA`` (+ adaptation), ``RC`` (+ calibration), ``RAC`` (both).
"""

from __future__ import annotations

import numpy as np

from .adapt import AdaptConfig, AdaptResult, adapt
from .classify import CalibrationConfig, PrototypeSet, evaluate
from .data import Dataset
from .embed import EmbeddingNet, forward

VARIANTS = {
    "R": {"adapt": False, "calibrate": False},
    "RA": {"adapt": True, "calibrate": False},
    "RC": {"adapt": False, "calibrate": True},
    "RAC": {"adapt": True, "calibrate": True},
}


class VariantError(ValueError):
    pass


def check_variant(variant, gamma, adapted_given=None):
    """Validate that ``gamma`` and an optional adaptation match ``variant``."""
    if variant not in VARIANTS:
        raise VariantError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    flags = VARIANTS[variant]
    if not flags["calibrate"] and gamma != 1.0:
        raise VariantError(f"variant {variant} requires gamma = 1 (got {gamma})")
    if adapted_given is not None and adapted_given != flags["adapt"]:
        state = "given" if adapted_given else "missing"
        raise VariantError(f"variant {variant} is inconsistent with the adaptation being {state}")
    return flags


def adaptation_inputs(net: EmbeddingNet, test: Dataset):
    """``(U, A, unseen class ids, sample ids)`` for the unseen test samples."""
    unseen = list(test.manifest.unseen_class_ids)
    mask = np.isin(test.labels, unseen)
    U = test.features[mask]
    A = forward(net, test.descriptors_for(unseen))
    return U, A, unseen, test.sample_ids[mask]


def run_adaptation(net: EmbeddingNet, test: Dataset, cfg: AdaptConfig = AdaptConfig()) -> AdaptResult:
    U, A, unseen, ids = adaptation_inputs(net, test)
    if U.shape[0] == 0:
        raise ValueError("test set has no unseen-class samples to adapt to")
    return adapt(U, A, unseen, cfg, sample_ids=ids, fallback=A)


def build_prototypes(net: EmbeddingNet, ds: Dataset, adapted=None) -> PrototypeSet:
    """Embedded descriptors of every class, with adapted unseen rows if given.

    ``adapted`` is ``(class_ids, rows)``.
    """
    m = ds.manifest
    protos = forward(net, ds.descriptors)
    if adapted is not None:
        index = {c: i for i, c in enumerate(m.class_ids)}
        for c, row in zip(adapted[0], np.asarray(adapted[1])):
            protos[index[int(c)]] = row
    seen = set(m.seen_class_ids)
    return PrototypeSet(protos, np.asarray(m.class_ids), [c in seen for c in m.class_ids])


def evaluate_variant(net, test, variant="R", gamma=1.0, adapt_cfg=AdaptConfig(),
                     adaptation=None, config_echo=None):
    """Evaluate ``net`` on ``test`` under an ablation variant.

    Runs the adaptation when the variant needs one and ``adaptation`` (an
    :class:`AdaptResult` or ``(class_ids, rows)``) was not supplied.
    """
    flags = check_variant(variant, gamma)
    adapted = None
    if flags["adapt"]:
        if adaptation is None:
            adaptation = run_adaptation(net, test, adapt_cfg)
        adapted = adaptation if isinstance(adaptation, tuple) else (adaptation.class_ids, adaptation.adapted)
    protos = build_prototypes(net, test, adapted)
    echo = {"variant": variant, "gamma": gamma, **(config_echo or {})}
    return evaluate(test, protos, CalibrationConfig(gamma), echo)
