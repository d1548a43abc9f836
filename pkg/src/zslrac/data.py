"""Datasets of precomputed features with per-class semantic descriptors.

On disk a dataset is a JSON manifest next to two tables::

    manifest.json     name, dims, class lists, relative file paths
    features.csv      sample_id,class_id,f0,...,f{d-1}
    descriptors.csv   class_id,a0,...,a{s-1}

A feature file ending in ``.bin`` is read as little-endian float64,
row-major, with the same column layout as the CSV (sample id and class id
first) and a ``<file>.json`` sidecar holding ``{"rows": ..., "cols": ...}``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import substream
from .errors import DataError


@dataclass(frozen=True)
class Manifest:
    name: str
    feature_dim: int
    descriptor_dim: int
    class_ids: tuple
    seen_class_ids: tuple
    unseen_class_ids: tuple
    feature_file: str = "features.csv"
    descriptor_file: str = "descriptors.csv"

    def __post_init__(self):
        for attr in ("class_ids", "seen_class_ids", "unseen_class_ids"):
            object.__setattr__(self, attr, tuple(int(c) for c in getattr(self, attr)))

    def to_dict(self):
        return {
            "name": self.name,
            "feature_dim": self.feature_dim,
            "descriptor_dim": self.descriptor_dim,
            "class_ids": list(self.class_ids),
            "seen_class_ids": list(self.seen_class_ids),
            "unseen_class_ids": list(self.unseen_class_ids),
            "feature_file": self.feature_file,
            "descriptor_file": self.descriptor_file,
        }

    @classmethod
    def from_dict(cls, d):
        missing = {"name", "feature_dim", "descriptor_dim", "class_ids",
                   "seen_class_ids", "unseen_class_ids"} - set(d)
        if missing:
            raise DataError(f"manifest missing fields: {sorted(missing)}")
        return cls(
            name=str(d["name"]),
            feature_dim=int(d["feature_dim"]),
            descriptor_dim=int(d["descriptor_dim"]),
            class_ids=d["class_ids"],
            seen_class_ids=d["seen_class_ids"],
            unseen_class_ids=d["unseen_class_ids"],
            feature_file=d.get("feature_file", "features.csv"),
            descriptor_file=d.get("descriptor_file", "descriptors.csv"),
        )


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature rows, their labels, and the descriptor table of all classes.

    ``descriptors`` rows follow ``manifest.class_ids``.  Arrays are copied
    and made read-only on construction.
    """

    manifest: Manifest
    features: np.ndarray
    labels: np.ndarray
    descriptors: np.ndarray
    sample_ids: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(np.atleast_2d(self.features)))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "descriptors", _frozen(np.atleast_2d(self.descriptors)))
        ids = np.arange(len(self.labels)) if self.sample_ids is None else self.sample_ids
        object.__setattr__(self, "sample_ids", _frozen(ids, np.int64))

    @property
    def n_samples(self):
        return self.features.shape[0]

    def descriptors_for(self, class_ids):
        index = {c: i for i, c in enumerate(self.manifest.class_ids)}
        try:
            rows = [index[int(c)] for c in class_ids]
        except KeyError as exc:
            raise DataError(f"class {exc.args[0]} not in manifest") from None
        return self.descriptors[rows]

    def subset(self, mask):
        mask = np.asarray(mask)
        return Dataset(self.manifest, self.features[mask], self.labels[mask],
                       self.descriptors, self.sample_ids[mask])


@dataclass(frozen=True)
class SyntheticConfig:
    """Gaussian clusters whose descriptors are an affine image of the centers.

    Centers live in a ``latent_dim``-dimensional subspace so the
    descriptor-to-feature map is affine and recoverable from the seen
    classes.  ``latent_dim=None`` picks ``min(s, d, seen_classes - 1)``.
    """

    seen_classes: int = 5
    unseen_classes: int = 3
    samples_per_class: int = 30
    feature_dim: int = 16
    descriptor_dim: int = 8
    cluster_spread: float = 0.05
    descriptor_noise: float = 0.0
    seed: int = 0
    center_scale: float = 1.0
    latent_dim: int = None

    def __post_init__(self):
        for name in ("seen_classes", "unseen_classes", "samples_per_class",
                     "feature_dim", "descriptor_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.cluster_spread < 0 or self.descriptor_noise < 0:
            raise ValueError("cluster_spread and descriptor_noise must be >= 0")

    @property
    def resolved_latent_dim(self):
        if self.latent_dim is not None:
            return int(self.latent_dim)
        return max(1, min(self.descriptor_dim, self.feature_dim, self.seen_classes - 1))


@dataclass(frozen=True)
class SyntheticMaps:
    """The affine descriptor map used by :func:`synthesize_dataset`.

    ``descriptor = (center @ basis) @ mixing.T + offset`` and
    ``center = ((descriptor - offset) @ mixing) @ basis.T``.
    """

    basis: np.ndarray   # d x k, orthonormal columns
    mixing: np.ndarray  # s x k, orthonormal columns
    offset: np.ndarray  # s
    centers: np.ndarray

    def to_descriptor(self, centers):
        return (np.asarray(centers) @ self.basis) @ self.mixing.T + self.offset

    def to_center(self, descriptors):
        return ((np.asarray(descriptors) - self.offset) @ self.mixing) @ self.basis.T


def _orthonormal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def synthetic_maps(cfg: SyntheticConfig) -> SyntheticMaps:
    return _draw_maps(cfg, substream(cfg.seed, "synthesis"))


def _draw_maps(cfg, rng):
    k = cfg.resolved_latent_dim
    if k > min(cfg.feature_dim, cfg.descriptor_dim):
        raise ValueError("latent_dim cannot exceed feature_dim or descriptor_dim")
    n_classes = cfg.seen_classes + cfg.unseen_classes
    basis = _orthonormal(rng, cfg.feature_dim, k)
    mixing = _orthonormal(rng, cfg.descriptor_dim, k)
    offset = rng.standard_normal(cfg.descriptor_dim)
    latent = cfg.center_scale * rng.standard_normal((n_classes, k))
    return SyntheticMaps(basis, mixing, offset, latent @ basis.T)


def synthesize_dataset(cfg: SyntheticConfig):
    """Return ``(train, test)`` for a generalized zero-shot split.

    Classes ``0 .. seen-1`` are seen and the rest unseen.  ``train`` holds
    seen-class samples only; ``test`` holds fresh samples of every class.
    """
    rng = substream(cfg.seed, "synthesis")
    maps = _draw_maps(cfg, rng)
    n_classes = cfg.seen_classes + cfg.unseen_classes
    class_ids = list(range(n_classes))
    seen = class_ids[:cfg.seen_classes]
    unseen = class_ids[cfg.seen_classes:]

    descriptors = maps.to_descriptor(maps.centers)
    if cfg.descriptor_noise > 0:
        descriptors = descriptors + cfg.descriptor_noise * rng.standard_normal(descriptors.shape)

    def draw(classes):
        labels = np.repeat(np.asarray(classes, dtype=np.int64), cfg.samples_per_class)
        feats = maps.centers[labels]
        if cfg.cluster_spread > 0:
            feats = feats + cfg.cluster_spread * rng.standard_normal(feats.shape)
        return feats, labels

    manifest = Manifest(
        name="synthetic",
        feature_dim=cfg.feature_dim,
        descriptor_dim=cfg.descriptor_dim,
        class_ids=class_ids,
        seen_class_ids=seen,
        unseen_class_ids=unseen,
    )
    tr_x, tr_y = draw(seen)
    te_x, te_y = draw(class_ids)
    train = Dataset(_with_files(manifest, "train"), tr_x, tr_y, descriptors)
    test = Dataset(_with_files(manifest, "test"), te_x, te_y, descriptors)
    return train, test


def _with_files(m, prefix):
    d = m.to_dict()
    d.update(name=f"{m.name}-{prefix}", feature_file=f"{prefix}_features.csv",
             descriptor_file="descriptors.csv")
    return Manifest.from_dict(d)


def class_means(ds: Dataset, class_ids) -> np.ndarray:
    """Mean feature row of each requested class, in the requested order."""
    out = np.empty((len(class_ids), ds.features.shape[1]))
    for row, c in enumerate(class_ids):
        mask = ds.labels == c
        if not mask.any():
            raise DataError(f"class {c} has no samples")
        out[row] = ds.features[mask].mean(axis=0)
    return out


def validate_dataset(ds: Dataset) -> list:
    """Return one human-readable finding per violated invariant."""
    m = ds.manifest
    findings = []
    ids = list(m.class_ids)
    dupes = sorted({c for c in ids if ids.count(c) > 1})
    for c in dupes:
        findings.append(f"duplicate class id {c} in manifest")
    seen, unseen = set(m.seen_class_ids), set(m.unseen_class_ids)
    if seen & unseen:
        findings.append(f"classes both seen and unseen: {sorted(seen & unseen)}")
    if seen | unseen != set(ids):
        findings.append("seen and unseen class ids do not partition class_ids")
    if ds.features.ndim != 2 or ds.features.shape[1] != m.feature_dim:
        findings.append(f"features have shape {ds.features.shape}, "
                        f"expected (N, {m.feature_dim})")
    if ds.descriptors.shape != (len(ids), m.descriptor_dim):
        findings.append(f"descriptors have shape {ds.descriptors.shape}, "
                        f"expected ({len(ids)}, {m.descriptor_dim})")
    if ds.features.shape[0] != ds.labels.shape[0]:
        findings.append(f"{ds.features.shape[0]} feature rows but "
                        f"{ds.labels.shape[0]} labels")
    if ds.sample_ids.shape != ds.labels.shape:
        findings.append("sample id count does not match label count")
    known = set(ids)
    for row, label in enumerate(ds.labels.tolist()):
        if label not in known:
            findings.append(f"row {row}: label {label} not in class_ids")
    for name, arr in (("features", ds.features), ("descriptors", ds.descriptors)):
        for r, c in np.argwhere(~np.isfinite(arr)).tolist():
            findings.append(f"{name} row {r} column {c}: non-finite value {arr[r, c]!r}")
    return findings


def l2_normalize_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def _read_header(path):
    with open(path, encoding="utf-8") as fh:
        return fh.readline().strip().split(",")


def _read_csv_table(path, first_cols):
    header = _read_header(path)
    if header[:len(first_cols)] != list(first_cols):
        raise DataError(f"{path}: header must start with {','.join(first_cols)}")
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if table.size == 0:
        table = table.reshape(0, len(header))
    if table.shape[1] != len(header):
        raise DataError(f"{path}: {table.shape[1]} columns but header has {len(header)}")
    return table


def _read_binary_table(path):
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise DataError(f"{path}: missing sidecar {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    rows, cols = int(meta["rows"]), int(meta["cols"])
    raw = np.fromfile(path, dtype="<f8")
    if raw.size != rows * cols:
        raise DataError(f"{path}: {raw.size} values, sidecar says {rows}x{cols}")
    return raw.reshape(rows, cols).astype(np.float64)


def _as_int_column(col, path, what):
    if not np.all(np.isfinite(col)) or not np.all(col == np.round(col)):
        bad = int(np.flatnonzero(~np.isfinite(col) | (col != np.round(col)))[0])
        raise DataError(f"{path}: row {bad}: {what} is not an integer")
    return col.astype(np.int64)


def load_dataset(manifest_path, normalize=False) -> Dataset:
    """Load and validate a dataset; raise :class:`DataError` on any problem."""
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON: {exc}") from None
    m = Manifest.from_dict(raw)
    base = manifest_path.parent
    fpath, dpath = base / m.feature_file, base / m.descriptor_file
    for p in (fpath, dpath):
        if not p.exists():
            raise DataError(f"referenced file not found: {p}")

    if fpath.suffix == ".bin":
        ftable = _read_binary_table(fpath)
    else:
        ftable = _read_csv_table(fpath, ("sample_id", "class_id"))
    if ftable.shape[1] - 2 != m.feature_dim:
        raise DataError(f"{fpath}: {ftable.shape[1] - 2} feature columns, "
                        f"manifest feature_dim={m.feature_dim}")
    dtable = _read_csv_table(dpath, ("class_id",))
    if dtable.shape[1] - 1 != m.descriptor_dim:
        raise DataError(f"{dpath}: {dtable.shape[1] - 1} descriptor columns, "
                        f"manifest descriptor_dim={m.descriptor_dim}")

    sample_ids = _as_int_column(ftable[:, 0], fpath, "sample_id")
    labels = _as_int_column(ftable[:, 1], fpath, "class_id")
    desc_ids = _as_int_column(dtable[:, 0], dpath, "class_id").tolist()
    known = set(m.class_ids)
    unknown = np.flatnonzero(~np.isin(labels, list(known)))
    if unknown.size:
        r = int(unknown[0])
        raise DataError(f"{fpath}: row {r}: label {labels[r]} not in class_ids")
    if sorted(desc_ids) != sorted(m.class_ids) or len(desc_ids) != len(set(desc_ids)):
        raise DataError(f"{dpath}: class ids {desc_ids} do not match manifest {list(m.class_ids)}")
    order = [desc_ids.index(c) for c in m.class_ids]
    features = ftable[:, 2:]
    descriptors = dtable[order, 1:]
    for p, arr in ((fpath, features), (dpath, descriptors)):
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            r, c = bad[0].tolist()
            raise DataError(f"{p}: row {r} column {c}: non-finite value")
    if normalize:
        features = l2_normalize_rows(features)
        descriptors = l2_normalize_rows(descriptors)
    ds = Dataset(m, features, labels, descriptors, sample_ids)
    findings = validate_dataset(ds)
    if findings:
        raise DataError(f"{manifest_path}: " + "; ".join(findings))
    return ds


def _write_csv(path, header, rows_id, table):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for ids, vals in zip(rows_id, table.tolist()):
            fh.write(",".join([*map(str, ids), *map(repr, vals)]) + "\n")


def save_dataset(ds: Dataset, directory, manifest_name=None, binary=False) -> Path:
    """Write ``ds`` under ``directory``; return the manifest path.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = ds.manifest
    if binary and not m.feature_file.endswith(".bin"):
        d = m.to_dict()
        d["feature_file"] = os.path.splitext(m.feature_file)[0] + ".bin"
        m = Manifest.from_dict(d)
    d = ds.features.shape[1]
    if m.feature_file.endswith(".bin"):
        table = np.column_stack([ds.sample_ids, ds.labels, ds.features]).astype("<f8")
        table.tofile(directory / m.feature_file)
        (directory / (m.feature_file + ".json")).write_text(
            json.dumps({"rows": table.shape[0], "cols": table.shape[1]}), encoding="utf-8")
    else:
        _write_csv(directory / m.feature_file,
                   ["sample_id", "class_id"] + [f"f{i}" for i in range(d)],
                   zip(ds.sample_ids.tolist(), ds.labels.tolist()), ds.features)
    _write_csv(directory / m.descriptor_file,
               ["class_id"] + [f"a{i}" for i in range(ds.descriptors.shape[1])],
               ((c,) for c in m.class_ids), ds.descriptors)
    name = manifest_name or f"{m.name}.json"
    path = directory / name
    path.write_text(json.dumps(m.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path
