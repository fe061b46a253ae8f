"""Dataset manifests: directory scans, class filters, stratified splits."""

import csv
import io
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, FormatError, StratificationError

MANIFEST_HEADER = ["path", "label", "bytes"]


@dataclass(frozen=True)
class Entry:
    path: str
    label: str
    size: int


class Manifest:
    """Ordered list of labelled files; class ids are dense in sorted-label order."""

    def __init__(self, entries):
        self.entries = list(entries)
        seen = set()
        for e in self.entries:
            if not e.label:
                raise FormatError(f"empty label for {e.path!r}")
            if e.path in seen:
                raise FormatError(f"duplicate path {e.path!r}")
            seen.add(e.path)
        self.classes = sorted({e.label for e in self.entries})
        self.class_index = {c: i for i, c in enumerate(self.classes)}

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, Manifest) and self.entries == other.entries

    @property
    def paths(self):
        return [e.path for e in self.entries]

    @property
    def labels(self):
        return [e.label for e in self.entries]

    def label_ids(self):
        return np.array([self.class_index[e.label] for e in self.entries], dtype=np.int64)

    def counts(self):
        return Counter(e.label for e in self.entries)

    def subset(self, keep_labels):
        keep = set(keep_labels)
        return Manifest(e for e in self.entries if e.label in keep)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in self.entries:
            w.writerow([e.path, e.label, e.size])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def scan_dir(root):
    """One entry per regular file; the label is the top-level subdirectory name."""
    root = Path(root)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    entries = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for dirpath, dirnames, filenames in os.walk(class_dir):
            dirnames.sort()
            for name in sorted(filenames):
                p = Path(dirpath) / name
                if p.is_file() and not p.is_symlink():
                    entries.append(Entry(str(p), class_dir.name, p.stat().st_size))
    if not entries:
        raise EmptyDataset(f"no files under {root}")
    entries.sort(key=lambda e: (e.label, e.path))
    return Manifest(entries)


def read_manifest(path):
    """Read ``path,label[,bytes]`` CSV; relative paths resolve against the CSV's folder."""
    base = Path(path).parent
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["path", "label"]:
            raise FormatError(f"{path}: expected a 'path,label[,bytes]' header")
        for rec in reader:
            if not rec:
                continue
            p = rec[0]
            full = p if os.path.isabs(p) else str(base / p)
            if len(rec) > 2 and rec[2] != "":
                size = int(rec[2])
            else:
                size = os.path.getsize(full) if os.path.exists(full) else 0
            entries.append(Entry(full, rec[1], size))
    if not entries:
        raise EmptyDataset(f"{path} lists no files")
    return Manifest(entries)


def load_manifest(source):
    """A manifest from either a class-per-subdirectory tree or a CSV file."""
    return scan_dir(source) if Path(source).is_dir() else read_manifest(source)


def filter_min_samples(m, min_count):
    """Keep classes with strictly more than ``min_count`` samples."""
    if min_count < 0:
        raise ValueError("min_count must be >= 0")
    counts = m.counts()
    return m.subset(c for c, n in counts.items() if n > min_count)


def top_k_classes(m, k):
    """Keep the ``k`` most populous classes (ties go to the smaller label)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(m.counts().items(), key=lambda cn: (-cn[1], cn[0]))
    return m.subset(c for c, _ in ranked[:k])


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


def _n_train(n, frac):
    return min(max(int(round(n * frac)), 1), n - 1)


def stratified_split(m, spec=SplitSpec()):
    """Partition into (train, eval) manifests, keeping the input's entry order."""
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0x5350]))
    train_idx = []
    if spec.stratified:
        by_class = {}
        for i, e in enumerate(m.entries):
            by_class.setdefault(e.label, []).append(i)
        for label in sorted(by_class):
            idx = by_class[label]
            if len(idx) < 2:
                raise StratificationError(
                    f"class {label!r} has {len(idx)} sample; cannot stratify"
                )
            perm = rng.permutation(len(idx))
            train_idx.extend(idx[j] for j in perm[:_n_train(len(idx), spec.train_fraction)])
    else:
        if len(m) < 2:
            raise StratificationError("need at least two samples to split")
        perm = rng.permutation(len(m))
        train_idx = perm[:_n_train(len(m), spec.train_fraction)].tolist()
    chosen = set(train_idx)
    train = [e for i, e in enumerate(m.entries) if i in chosen]
    held = [e for i, e in enumerate(m.entries) if i not in chosen]
    return Manifest(train), Manifest(held)
