"""
Sparse bag-of-words multi-domain corpora: parsing, writing, splitting, densifying.

On-disk layout:

    manifest.txt   optional first line `vocab<TAB><size>`, then one domain per line:
                   name<TAB>labeled-path<TAB>unlabeled-path[<TAB>valid-path<TAB>test-path]
    labeled lines  <label><TAB><idx>:<val> <idx>:<val> ...   (indices 0-based, ascending)
    unlabeled      <idx>:<val> <idx>:<val> ...

Paths in the manifest are relative to the manifest's directory.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, DataFormatError

logger = logging.getLogger(__name__)

DEFAULT_VOCAB_SIZE = 5000
MANIFEST_NAME = "manifest.txt"
META_NAME = "meta.json"
POOL_NAMES = ("labeled", "unlabeled", "valid", "test")


class SparseExample:
    """One bag-of-words instance: sorted feature ids, their values, optional label, domain index"""

    __slots__ = ("indices", "values", "label", "domain", "uid")

    def __init__(
        self,
        indices: Sequence[int],
        values: Sequence[float],
        label: Optional[int] = None,
        domain: int = 0,
        uid: str = "",
    ):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.label = label
        self.domain = domain
        self.uid = uid
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError(f"indices and values must be 1-D of equal length, got {self.indices.shape} / {self.values.shape}")
        if len(self.indices) > 1 and not np.all(np.diff(self.indices) > 0):
            raise ValueError("feature indices must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")
        if label is not None and label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label}")

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def without_label(self, uid: Optional[str] = None) -> "SparseExample":
        return SparseExample(self.indices, self.values, None, self.domain, uid or self.uid)

    def to_line(self) -> str:
        pairs = " ".join(f"{i}:{v!r}" for i, v in zip(self.indices.tolist(), self.values.tolist()))
        if self.label is None:
            return pairs
        return f"{self.label}\t{pairs}"

    @classmethod
    def from_line(
        cls,
        line: str,
        labeled: bool,
        vocab_size: int,
        domain: int = 0,
        uid: str = "",
        path: Optional[str] = None,
        line_number: Optional[int] = None,
    ) -> "SparseExample":
        """Parse one corpus line; every failure is reported with path and line number"""
        label = None
        body = line
        if labeled:
            head, _, body = line.partition("\t")
            if head.strip() not in ("0", "1"):
                raise DataFormatError(f"label must be 0 or 1, got {head.strip()!r}", path, line_number)
            label = int(head.strip())

        indices: List[int] = []
        values: List[float] = []
        for token in body.split():
            idx_text, sep, val_text = token.partition(":")
            if not sep:
                raise DataFormatError(f"expected idx:val, got {token!r}", path, line_number)
            try:
                idx = int(idx_text)
                val = float(val_text)
            except ValueError:
                raise DataFormatError(f"unparseable pair {token!r}", path, line_number) from None
            if idx < 0 or idx >= vocab_size:
                raise DataFormatError(f"feature index {idx} outside vocabulary of size {vocab_size}", path, line_number)
            if not math.isfinite(val):
                raise DataFormatError(f"non-finite value in {token!r}", path, line_number)
            if indices and idx <= indices[-1]:
                raise DataFormatError(f"feature indices not strictly ascending at {token!r}", path, line_number)
            indices.append(idx)
            values.append(val)
        return cls(indices, values, label, domain, uid)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseExample):
            return NotImplemented
        return (
            self.label == other.label
            and self.domain == other.domain
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"SparseExample(uid={self.uid!r}, domain={self.domain}, label={self.label}, nnz={self.nnz})"


class DomainPools:
    """Labeled/unlabeled pools of one domain plus optional validation and test pools"""

    def __init__(
        self,
        name: str,
        labeled: Optional[List[SparseExample]] = None,
        unlabeled: Optional[List[SparseExample]] = None,
        valid: Optional[List[SparseExample]] = None,
        test: Optional[List[SparseExample]] = None,
    ):
        self.name = name
        self.labeled = labeled or []
        self.unlabeled = unlabeled or []
        self.valid = valid or []
        self.test = test or []

    def pool(self, kind: str) -> List[SparseExample]:
        if kind not in POOL_NAMES:
            raise ValueError(f"unknown pool {kind!r}")
        return getattr(self, kind)

    def sizes(self) -> Dict[str, int]:
        return {kind: len(self.pool(kind)) for kind in POOL_NAMES}


class MultiDomainDataset:
    """M domains sharing one vocabulary"""

    def __init__(self, vocab_size: int, domains: List[DomainPools], meta: Optional[Dict[str, Any]] = None):
        self.vocab_size = vocab_size
        self.domains = domains
        self.meta = meta or {}
        for m, pools in enumerate(domains):
            for kind in POOL_NAMES:
                for example in pools.pool(kind):
                    if example.domain != m:
                        raise ConfigurationError(f"example {example.uid} in domain {pools.name} has domain index {example.domain}")
                    if example.nnz and example.indices[-1] >= vocab_size:
                        raise ConfigurationError(f"example {example.uid} exceeds vocabulary size {vocab_size}")

    @property
    def num_domains(self) -> int:
        return len(self.domains)

    @property
    def domain_names(self) -> List[str]:
        return [d.name for d in self.domains]

    def index_of(self, name: str) -> int:
        for m, pools in enumerate(self.domains):
            if pools.name == name:
                return m
        raise ConfigurationError(f"unknown domain {name!r}; known: {', '.join(self.domain_names)}")

    def summary(self) -> str:
        parts = []
        for d in self.domains:
            sizes = d.sizes()
            parts.append(f"{d.name}(L={sizes['labeled']}, U={sizes['unlabeled']}, V={sizes['valid']}, T={sizes['test']})")
        return f"{self.num_domains} domains, vocab {self.vocab_size}: " + ", ".join(parts)


# ── Reading and writing ─────────────────────────────────


def _read_pool(path: Path, labeled: bool, vocab_size: int, domain: int, prefix: str) -> List[SparseExample]:
    examples = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, 1):
            # a blank unlabeled line is an example with no features
            line = raw.rstrip("\n").rstrip("\r")
            examples.append(
                SparseExample.from_line(
                    line,
                    labeled=labeled,
                    vocab_size=vocab_size,
                    domain=domain,
                    uid=f"{prefix}/{len(examples)}",
                    path=str(path),
                    line_number=line_number,
                )
            )
    return examples


def load_corpus(manifest_path: str, vocab_size: Optional[int] = None) -> MultiDomainDataset:
    """
    Load a multi-domain corpus described by a manifest.

    The vocabulary size comes from the argument, else the manifest's `vocab`
    line, else the 5000-feature default. Examples stay sparse; densification
    happens per batch.
    """
    manifest = Path(manifest_path)
    if manifest.is_dir():
        manifest = manifest / MANIFEST_NAME
    if not manifest.is_file():
        raise DataFormatError("manifest not found", str(manifest))

    base = manifest.parent
    entries: List[Tuple[int, List[str]]] = []
    declared_vocab = None
    with manifest.open("r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if fields[0] == "vocab":
                if len(fields) != 2 or not fields[1].strip().isdigit():
                    raise DataFormatError("expected `vocab<TAB><size>`", str(manifest), line_number)
                declared_vocab = int(fields[1])
                continue
            if len(fields) not in (3, 5):
                raise DataFormatError(
                    f"expected name, labeled, unlabeled[, valid, test] separated by tabs, got {len(fields)} fields",
                    str(manifest),
                    line_number,
                )
            entries.append((line_number, fields))

    vocab_size = vocab_size or declared_vocab or DEFAULT_VOCAB_SIZE
    if not entries:
        raise DataFormatError("manifest lists no domains", str(manifest))

    domains = []
    for m, (_, fields) in enumerate(entries):
        name = fields[0]
        pools = DomainPools(name)
        kinds = POOL_NAMES[: len(fields) - 1]
        for kind, rel_path in zip(kinds, fields[1:]):
            path = base / rel_path
            if not path.is_file():
                raise DataFormatError(f"{kind} file for domain {name!r} not found", str(path))
            setattr(pools, kind, _read_pool(path, kind != "unlabeled", vocab_size, m, f"{name}/{kind}"))
        domains.append(pools)

    dataset = MultiDomainDataset(vocab_size, domains)
    meta_path = base / META_NAME
    if meta_path.is_file():
        dataset.meta = json.loads(meta_path.read_text(encoding="utf-8"))
    logger.info(f"Loaded {manifest}: {dataset.summary()}")
    return dataset


def write_corpus(dataset: MultiDomainDataset, directory: str) -> Path:
    """Write a dataset in the manifest format; returns the manifest path"""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_split_pools = any(d.valid or d.test for d in dataset.domains)

    manifest_lines = [f"vocab\t{dataset.vocab_size}"]
    for pools in dataset.domains:
        kinds = POOL_NAMES if write_split_pools else POOL_NAMES[:2]
        files = []
        for kind in kinds:
            file_name = f"{pools.name}.{kind}"
            lines = [example.to_line() for example in pools.pool(kind)]
            (out / file_name).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
            files.append(file_name)
        manifest_lines.append("\t".join([pools.name, *files]))

    manifest = out / MANIFEST_NAME
    manifest.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    if dataset.meta:
        (out / META_NAME).write_text(json.dumps(dataset.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote corpus with {dataset.num_domains} domains to {out}")
    return manifest


# ── Splits ──────────────────────────────────────────────


def five_fold_split(
    pool: Sequence[SparseExample], fold: int, seed: int
) -> Tuple[List[SparseExample], List[SparseExample], List[SparseExample]]:
    """
    Five equal partitions from a seeded shuffle: fold k tests on partition k,
    validates on partition k+1 (mod 5) and trains on the other three.
    """
    if not 0 <= fold < 5:
        raise ConfigurationError(f"fold must be in 0..4, got {fold}")
    if len(pool) < 5:
        raise ConfigurationError(f"five-fold split needs at least 5 examples, got {len(pool)}")
    order = np.random.default_rng(seed).permutation(len(pool))
    parts = np.array_split(order, 5)
    test_part = fold
    valid_part = (fold + 1) % 5
    train = [pool[i] for k, part in enumerate(parts) if k not in (test_part, valid_part) for i in part]
    valid = [pool[i] for i in parts[valid_part]]
    test = [pool[i] for i in parts[test_part]]
    return train, valid, test


def ratio_split(
    pool: Sequence[SparseExample],
    seed: int,
    valid_fraction: float = 0.1,
    test_fraction: float = 0.2,
) -> Tuple[List[SparseExample], List[SparseExample], List[SparseExample]]:
    """Seeded shuffle then contiguous train/valid/test slices; train takes the rounding remainder"""
    if len(pool) < 10:
        raise ConfigurationError(f"ratio split needs at least 10 examples, got {len(pool)}")
    order = np.random.default_rng(seed).permutation(len(pool))
    n_valid = int(math.floor(len(pool) * valid_fraction))
    n_test = int(math.floor(len(pool) * test_fraction))
    n_train = len(pool) - n_valid - n_test
    train = [pool[i] for i in order[:n_train]]
    valid = [pool[i] for i in order[n_train : n_train + n_valid]]
    test = [pool[i] for i in order[n_train + n_valid :]]
    return train, valid, test


# ── Batches ─────────────────────────────────────────────


def to_dense_batch(examples: Sequence[SparseExample], vocab_size: int, binarize: bool = False) -> np.ndarray:
    """Dense n x vocab float64 matrix; with binarize every non-zero becomes 1"""
    batch = np.zeros((len(examples), vocab_size))
    for row, example in enumerate(examples):
        if example.nnz:
            batch[row, example.indices] = example.values
    if binarize:
        batch = (batch != 0.0).astype(np.float64)
    return batch


def labels_of(examples: Sequence[SparseExample]) -> np.ndarray:
    labels = [example.label for example in examples]
    if any(label is None for label in labels):
        raise ConfigurationError("labels requested for unlabeled examples")
    return np.asarray(labels, dtype=np.int64)
