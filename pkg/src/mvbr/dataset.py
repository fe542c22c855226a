"""Dataset contract: sample records, binary container, synthetic generation.

Each record holds precomputed per-view feature vectors for up to three
modalities ("rgb", "dct", "lavila") and a binary label vector over the 14
behavior classes. The "lavila" modality is a single view-agnostic vector
(the 256-token clip embedding mean-pooled at ingestion time).

Container layout, little-endian ("MTBR" version 1):

    magic "MTBR" | u8 version | u64 n_samples | u16 n_views | u16 n_classes
    | u32 feat_dim | u8 modality_mask (bit0 rgb, bit1 dct, bit2 lavila)
    | u32 lavila_dim
    per record:
    u64 id | u8 split (0 train, 1 val, 2 test) | n_classes label bytes
    | for each present modality in mask order:
      rgb/dct: n_views * feat_dim float32;  lavila: lavila_dim float32

Any deviation raises ``FormatError`` with the failing byte offset. Writing
the same records twice produces byte-identical files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

__all__ = [
    "CLASS_NAMES",
    "MODALITIES",
    "SPLITS",
    "DATASET_MAGIC",
    "DATASET_VERSION",
    "DatasetManifest",
    "SampleRecord",
    "SynthSpec",
    "write_dataset",
    "read_dataset",
    "generate_synthetic",
    "class_prevalence",
    "split_records",
    "split_arrays",
]

DATASET_MAGIC = b"MTBR"
DATASET_VERSION = 1

# Fixed label order; index i of every label vector refers to CLASS_NAMES[i].
CLASS_NAMES = (
    "hand-face",
    "hand-mouth",
    "gesture",
    "fumble",
    "scratch",
    "stretching",
    "smearing-hands",
    "shrug",
    "adjusting-clothing",
    "groom",
    "fold-arms",
    "leg-movements",
    "settle",
    "legs-crossed",
)

# Modality mask bit order. Views are ordered (frontal, left, right).
MODALITIES = ("rgb", "dct", "lavila")
SPLITS = ("train", "val", "test")

_HEADER = struct.Struct("<4sBQHHIBI")
_RECORD_HEAD = struct.Struct("<QB")
_SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}


@dataclass
class DatasetManifest:
    n_samples: int
    n_views: int
    n_classes: int
    feat_dim: int
    modalities: tuple
    lavila_dim: int
    splits: dict = field(default_factory=dict)  # record id -> split name


@dataclass
class SampleRecord:
    id: int
    split: str
    labels: np.ndarray  # (n_classes,) uint8 in {0, 1}
    features: dict  # modality -> float32 array; rgb/dct (n_views, feat_dim), lavila (lavila_dim,)


def _validate_consistency(records, manifest):
    if len(records) != manifest.n_samples:
        raise ValidationError(
            f"manifest says {manifest.n_samples} samples, got {len(records)} records"
        )
    for m in manifest.modalities:
        if m not in MODALITIES:
            raise ValidationError(f"unknown modality {m!r}")
    seen = set()
    for r in records:
        if r.id in seen:
            raise ValidationError(f"duplicate record id {r.id}")
        seen.add(r.id)
        if r.split not in _SPLIT_CODE:
            raise ValidationError(f"record {r.id}: unknown split {r.split!r}")
        if manifest.splits.get(r.id) != r.split:
            raise ValidationError(
                f"record {r.id}: split {r.split!r} disagrees with manifest "
                f"{manifest.splits.get(r.id)!r}"
            )
        labels = np.asarray(r.labels)
        if labels.shape != (manifest.n_classes,):
            raise ValidationError(
                f"record {r.id}: labels shaped {labels.shape}, "
                f"expected ({manifest.n_classes},)"
            )
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError(f"record {r.id}: labels must be 0/1")
        if set(r.features) != set(manifest.modalities):
            raise ValidationError(
                f"record {r.id}: modalities {sorted(r.features)} != "
                f"manifest {sorted(manifest.modalities)}"
            )
        for m in manifest.modalities:
            arr = np.asarray(r.features[m])
            want = (
                (manifest.lavila_dim,)
                if m == "lavila"
                else (manifest.n_views, manifest.feat_dim)
            )
            if arr.shape != want:
                raise ValidationError(
                    f"record {r.id}: {m} features shaped {arr.shape}, expected {want}"
                )
            if not np.isfinite(arr).all():
                raise ValidationError(f"record {r.id}: non-finite {m} features")
    if set(manifest.splits) != seen:
        raise ValidationError("manifest split table does not match record ids")


def _mask(modalities):
    mask = 0
    for i, m in enumerate(MODALITIES):
        if m in modalities:
            mask |= 1 << i
    return mask


def write_dataset(records, manifest, path):
    """Validate then serialize; identical inputs produce identical bytes."""
    _validate_consistency(records, manifest)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                DATASET_MAGIC,
                DATASET_VERSION,
                manifest.n_samples,
                manifest.n_views,
                manifest.n_classes,
                manifest.feat_dim,
                _mask(manifest.modalities),
                manifest.lavila_dim,
            )
        )
        for r in records:
            fh.write(_RECORD_HEAD.pack(r.id, _SPLIT_CODE[r.split]))
            fh.write(np.asarray(r.labels, dtype=np.uint8).tobytes())
            for m in MODALITIES:
                if m in manifest.modalities:
                    fh.write(np.asarray(r.features[m], dtype="<f4").tobytes())


class _Cursor:
    """Byte cursor that reports the failing offset on underrun."""

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=len(self.data))
        view = self.data[self.offset : self.offset + n]
        self.offset += n
        return view


def read_dataset(path):
    """Parse a container; inverse of ``write_dataset`` bit-for-bit."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    header = cur.take(_HEADER.size, "header")
    magic, version, n_samples, n_views, n_classes, feat_dim, mask, lavila_dim = (
        _HEADER.unpack(header)
    )
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}", offset=0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", offset=4)
    modalities = tuple(m for i, m in enumerate(MODALITIES) if mask & (1 << i))
    if mask >= (1 << len(MODALITIES)):
        raise FormatError(f"unknown bits in modality_mask {mask:#x}", offset=17)
    records = []
    splits = {}
    for _ in range(n_samples):
        rec_id, split_code = _RECORD_HEAD.unpack(
            cur.take(_RECORD_HEAD.size, "record header")
        )
        if split_code >= len(SPLITS):
            raise FormatError(
                f"record {rec_id}: invalid split code {split_code}",
                offset=cur.offset - 1,
            )
        labels = np.frombuffer(cur.take(n_classes, "labels"), dtype=np.uint8).copy()
        if not np.isin(labels, (0, 1)).all():
            raise FormatError(
                f"record {rec_id}: label bytes outside {{0,1}}",
                offset=cur.offset - n_classes,
            )
        features = {}
        for m in modalities:
            count = lavila_dim if m == "lavila" else n_views * feat_dim
            raw = cur.take(count * 4, f"{m} features")
            arr = np.frombuffer(raw, dtype="<f4").copy()
            features[m] = arr if m == "lavila" else arr.reshape(n_views, feat_dim)
        split = SPLITS[split_code]
        records.append(SampleRecord(rec_id, split, labels, features))
        splits[rec_id] = split
    if cur.offset != len(data):
        raise FormatError("trailing bytes after final record", offset=cur.offset)
    manifest = DatasetManifest(
        n_samples, n_views, n_classes, feat_dim, modalities, lavila_dim, splits
    )
    _validate_consistency(records, manifest)
    return manifest, records


def _per_class(value, n_classes, name, caster):
    arr = [value] * n_classes if np.isscalar(value) or isinstance(value, str) else list(value)
    if len(arr) != n_classes:
        raise ValidationError(f"{name} needs 1 or {n_classes} entries, got {len(arr)}")
    return [caster(v) for v in arr]


@dataclass
class SynthSpec:
    """Recipe for planted-signal data.

    For every positive occurrence of class c, a fixed unit direction u_c
    (seeded, one per class) scaled by ``signal_strength`` is added to the
    features of exactly the (modality, view) pair named by
    ``informative_modality[c]`` / ``informative_view[c]``; "both" plants the
    same direction in rgb and dct. Everything else is i.i.d. Gaussian noise,
    so the labels are recoverable only from the designated pair.
    """

    seed: int
    n_train: int
    n_val: int
    n_test: int = 0
    n_classes: int = 14
    feat_dim: int = 1024
    lavila_dim: int = 768
    n_views: int = 3
    modalities: tuple = ("rgb", "dct")
    informative_view: object = 0
    informative_modality: object = "rgb"
    signal_strength: float = 3.0
    label_prevalence: object = 0.2
    noise_sigma: float = 1.0

    def resolved(self):
        views = _per_class(self.informative_view, self.n_classes, "informative_view", int)
        mods = _per_class(
            self.informative_modality, self.n_classes, "informative_modality", str
        )
        prev = _per_class(
            self.label_prevalence, self.n_classes, "label_prevalence", float
        )
        for v in views:
            if not 0 <= v < self.n_views:
                raise ValidationError(f"informative_view {v} outside 0..{self.n_views - 1}")
        for m in mods:
            if m not in ("rgb", "dct", "both"):
                raise ValidationError(f"informative_modality must be rgb/dct/both, got {m!r}")
        for p in prev:
            if not 0.0 < p < 1.0:
                raise ValidationError(f"label_prevalence must lie in (0, 1), got {p}")
        if self.signal_strength < 0:
            raise ValidationError("signal_strength must be >= 0")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if self.n_train < 1 or self.n_val < 0 or self.n_test < 0:
            raise ValidationError("split sizes must be positive (train) / non-negative")
        mods_present = tuple(m for m in MODALITIES if m in self.modalities)
        if len(mods_present) != len(self.modalities):
            raise ValidationError(f"unknown modality in {self.modalities}")
        for m in mods:
            needed = ("rgb", "dct") if m == "both" else (m,)
            for n in needed:
                if n not in mods_present:
                    raise ValidationError(
                        f"informative modality {m!r} not among generated {mods_present}"
                    )
        return views, mods, prev, mods_present

    @classmethod
    def from_strings(cls, pairs):
        """Build from a parsed key=value mapping (CLI spec files)."""

        def _split_list(text):
            return [t.strip() for t in text.split(",") if t.strip()]

        known = {
            "seed": int,
            "n_train": int,
            "n_val": int,
            "n_test": int,
            "n_classes": int,
            "feat_dim": int,
            "lavila_dim": int,
            "signal_strength": float,
            "noise_sigma": float,
        }
        kwargs = {}
        for key, raw in pairs.items():
            if key in known:
                kwargs[key] = known[key](raw)
            elif key == "modalities":
                kwargs["modalities"] = tuple(_split_list(raw))
            elif key == "informative_view":
                parts = _split_list(raw)
                kwargs["informative_view"] = (
                    int(parts[0]) if len(parts) == 1 else [int(p) for p in parts]
                )
            elif key == "informative_modality":
                parts = _split_list(raw)
                kwargs["informative_modality"] = parts[0] if len(parts) == 1 else parts
            elif key == "label_prevalence":
                parts = _split_list(raw)
                kwargs["label_prevalence"] = (
                    float(parts[0]) if len(parts) == 1 else [float(p) for p in parts]
                )
            else:
                raise ValidationError(f"unknown synth spec key {key!r}")
        for required in ("seed", "n_train", "n_val"):
            if required not in kwargs:
                raise ValidationError(f"synth spec missing required key {required!r}")
        return cls(**kwargs)


def generate_synthetic(spec):
    """Deterministic planted-signal dataset; a pure function of the spec.

    Draw order is fixed: class directions first, then per split (train, val,
    test) the labels, then each present modality's noise in mask order, then
    the planted additions.
    """
    views, inf_mods, prev, modalities = spec.resolved()
    rng = np.random.default_rng(spec.seed)
    directions = np.empty((spec.n_classes, spec.feat_dim))
    for c in range(spec.n_classes):
        v = rng.standard_normal(spec.feat_dim)
        directions[c] = v / np.linalg.norm(v)
    prev_row = np.asarray(prev)

    records = []
    splits = {}
    next_id = 0
    for split, count in (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test)):
        if count == 0:
            continue
        labels = (rng.random((count, spec.n_classes)) < prev_row).astype(np.uint8)
        feats = {}
        for m in modalities:
            if m == "lavila":
                feats[m] = spec.noise_sigma * rng.standard_normal(
                    (count, spec.lavila_dim)
                )
            else:
                feats[m] = spec.noise_sigma * rng.standard_normal(
                    (count, spec.n_views, spec.feat_dim)
                )
        for c in range(spec.n_classes):
            rows = labels[:, c] == 1
            if not rows.any():
                continue
            targets = ("rgb", "dct") if inf_mods[c] == "both" else (inf_mods[c],)
            for m in targets:
                feats[m][rows, views[c], :] += spec.signal_strength * directions[c]
        for i in range(count):
            features = {
                m: feats[m][i].astype(np.float32) for m in modalities
            }
            records.append(
                SampleRecord(next_id, split, labels[i].copy(), features)
            )
            splits[next_id] = split
            next_id += 1
    manifest = DatasetManifest(
        n_samples=len(records),
        n_views=spec.n_views,
        n_classes=spec.n_classes,
        feat_dim=spec.feat_dim,
        modalities=modalities,
        lavila_dim=spec.lavila_dim,
        splits=splits,
    )
    return manifest, records


def class_prevalence(records):
    """Per-class positive fraction over a record list."""
    if not records:
        raise ValidationError("class_prevalence requires at least one record")
    stacked = np.stack([np.asarray(r.labels, dtype=np.float64) for r in records])
    return stacked.mean(axis=0)


def split_records(records, split):
    return [r for r in records if r.split == split]


def split_arrays(records, split, modalities=None):
    """Stack one split into float64 training arrays.

    Returns ``(features, labels)`` where features maps each requested
    modality to (n, n_views, feat_dim) or (n, lavila_dim) arrays.
    """
    subset = split_records(records, split)
    if not subset:
        raise ValidationError(f"split {split!r} has no records")
    if modalities is None:
        modalities = tuple(subset[0].features)
    for m in modalities:
        if m not in subset[0].features:
            raise ValidationError(f"records lack modality {m!r}")
    features = {
        m: np.stack([np.asarray(r.features[m], dtype=np.float64) for r in subset])
        for m in modalities
    }
    labels = np.stack([np.asarray(r.labels, dtype=np.float64) for r in subset])
    return features, labels
