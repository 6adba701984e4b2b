"""Interaction ingestion, binarization, per-user splitting and the sparse click matrix."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp


class DataError(ValueError):
    """Raised for unreadable, malformed or inconsistent interaction data."""


@dataclass(frozen=True)
class InteractionRecord:
    user_raw_id: str
    item_raw_id: str
    weight: Optional[float] = None

    def __post_init__(self):
        if not self.user_raw_id or not self.item_raw_id:
            raise DataError("user and item ids must be non-empty")
        if self.weight is not None and not math.isfinite(self.weight):
            raise DataError(f"non-finite weight {self.weight!r}")


class ClickDataset:
    """Binary user-item clicks over dense 0-based indices.

    ``users`` and ``items`` are parallel arrays holding the click pairs,
    kept sorted by (user, item) and free of duplicates. ``user_ids`` and
    ``item_ids`` map an index back to its raw id.
    """

    def __init__(self, users, items, user_ids: Sequence[str], item_ids: Sequence[str]):
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.num_users = len(self.user_ids)
        self.num_items = len(self.item_ids)
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        if users.shape != items.shape:
            raise DataError("users and items must have the same length")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise DataError("item index out of range")
        keys = np.unique(users * max(self.num_items, 1) + items)
        self.users = keys // max(self.num_items, 1)
        self.items = keys % max(self.num_items, 1)
        self._user_index = None
        self._item_index = None

    @property
    def user_index(self) -> dict:
        if self._user_index is None:
            self._user_index = {raw: k for k, raw in enumerate(self.user_ids)}
        return self._user_index

    @property
    def item_index(self) -> dict:
        if self._item_index is None:
            self._item_index = {raw: k for k, raw in enumerate(self.item_ids)}
        return self._item_index

    @property
    def num_clicks(self) -> int:
        return int(self.users.size)

    @property
    def density(self) -> float:
        """Fraction of the N x M matrix that is observed."""
        cells = self.num_users * self.num_items
        return self.num_clicks / cells if cells else 0.0

    def pairs(self) -> set:
        return set(zip(self.users.tolist(), self.items.tolist()))

    def with_clicks(self, users, items) -> "ClickDataset":
        """A view over the same id maps holding a different click set."""
        return ClickDataset(users, items, self.user_ids, self.item_ids)

    def __len__(self) -> int:
        return self.num_clicks

    def __repr__(self) -> str:
        return (
            f"ClickDataset(users={self.num_users}, items={self.num_items}, "
            f"clicks={self.num_clicks})"
        )


@dataclass
class DatasetSplit:
    train: ClickDataset
    validation: ClickDataset
    test: ClickDataset
    seed: int = 0

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items


@dataclass
class SparseClickMatrix:
    """Per-user sorted item lists stored in compressed-row form.

    Row ``u`` is ``indices[indptr[u]:indptr[u + 1]]``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    num_users: int
    num_items: int
    _csr: Optional[sp.csr_matrix] = field(default=None, repr=False, compare=False)

    def row(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    @property
    def rows(self) -> list:
        return [self.row(u) for u in range(self.num_users)]

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def pairs(self) -> tuple:
        """(users, items) arrays of all stored clicks in row order."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.row_lengths())
        return users, self.indices.copy()

    def contains(self, users, items) -> np.ndarray:
        """Vectorized membership test for (user, item) pairs."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        keys = np.repeat(np.arange(self.num_users, dtype=np.int64), self.row_lengths())
        keys = keys * self.num_items + self.indices
        query = users * self.num_items + items
        pos = np.searchsorted(keys, query)
        pos = np.minimum(pos, max(keys.size - 1, 0))
        if keys.size == 0:
            return np.zeros(query.shape, dtype=bool)
        return keys[pos] == query

    def to_csr(self) -> sp.csr_matrix:
        if self._csr is None:
            data = np.ones(self.indices.size, dtype=np.float64)
            self._csr = sp.csr_matrix(
                (data, self.indices, self.indptr), shape=(self.num_users, self.num_items)
            )
        return self._csr


ColumnRef = Union[str, int]


def load_interactions(
    path: Union[str, os.PathLike],
    format: str = "csv",
    user_col: ColumnRef = 0,
    item_col: ColumnRef = 1,
    weight_col: Optional[ColumnRef] = None,
    header: bool = True,
    delimiter: Optional[str] = None,
) -> list:
    """Read interaction rows from a CSV or TSV file.

    Columns may be given by header name or by 0-based position. Errors name
    the physical line of the offending row.
    """
    if format not in ("csv", "tsv"):
        raise DataError(f"unsupported format {format!r}")
    if delimiter is None:
        delimiter = "," if format == "csv" else "\t"
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")

    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        names = None
        if header:
            names = next(reader, None)
            if names is None:
                return records
            names = [n.strip() for n in names]

        def resolve(col):
            if col is None:
                return None
            if isinstance(col, int):
                return col
            if names is None:
                if str(col).isdigit():
                    return int(col)
                raise DataError(f"column {col!r} named but file has no header")
            if col not in names:
                if str(col).isdigit():
                    return int(col)
                raise DataError(f"missing column {col!r} in {path}")
            return names.index(col)

        ucol, icol, wcol = resolve(user_col), resolve(item_col), resolve(weight_col)
        needed = max(c for c in (ucol, icol, wcol) if c is not None)
        for row in reader:
            lineno = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) <= needed:
                raise DataError(f"{path}: line {lineno}: expected at least {needed + 1} fields")
            user = row[ucol].strip()
            item = row[icol].strip()
            if not user or not item:
                raise DataError(f"{path}: line {lineno}: empty user or item id")
            weight = None
            if wcol is not None:
                try:
                    weight = float(row[wcol])
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}: unparseable weight {row[wcol]!r}"
                    ) from None
                if not math.isfinite(weight):
                    raise DataError(f"{path}: line {lineno}: non-finite weight")
            records.append(InteractionRecord(user, item, weight))
    return records


def binarize(records: Iterable[InteractionRecord], threshold: Optional[float] = None) -> ClickDataset:
    """Turn raw interactions into a binary click set.

    With a threshold, (u, i) is a click iff some record for it has
    ``weight >= threshold``; without one every record counts. Indices follow
    first appearance in the record stream, including users and items whose
    records all fall below the threshold.
    """
    user_index: dict = {}
    item_index: dict = {}
    users, items = [], []
    for rec in records:
        u = user_index.setdefault(rec.user_raw_id, len(user_index))
        i = item_index.setdefault(rec.item_raw_id, len(item_index))
        if threshold is not None:
            if rec.weight is None:
                raise DataError(
                    f"threshold set but record ({rec.user_raw_id}, {rec.item_raw_id}) has no weight"
                )
            if rec.weight < threshold:
                continue
        users.append(u)
        items.append(i)
    return ClickDataset(users, items, list(user_index), list(item_index))


def to_records(dataset: ClickDataset) -> list:
    """Weightless records for every click, in (user, item) order."""
    return [
        InteractionRecord(dataset.user_ids[u], dataset.item_ids[i])
        for u, i in zip(dataset.users.tolist(), dataset.items.tolist())
    ]


def filter_min_activity(dataset: ClickDataset, min_user_clicks: int = 1, min_item_clicks: int = 1) -> ClickDataset:
    """Iteratively drop users and items below the activity floors, then reindex."""
    users, items = dataset.users, dataset.items
    while True:
        ucount = np.bincount(users, minlength=dataset.num_users)
        icount = np.bincount(items, minlength=dataset.num_items)
        keep = (ucount[users] >= min_user_clicks) & (icount[items] >= min_item_clicks)
        if keep.all():
            break
        users, items = users[keep], items[keep]
    kept_users = np.unique(users)
    kept_items = np.unique(items)
    umap = np.full(dataset.num_users, -1, dtype=np.int64)
    imap = np.full(dataset.num_items, -1, dtype=np.int64)
    umap[kept_users] = np.arange(kept_users.size)
    imap[kept_items] = np.arange(kept_items.size)
    return ClickDataset(
        umap[users],
        imap[items],
        [dataset.user_ids[u] for u in kept_users],
        [dataset.item_ids[i] for i in kept_items],
    )


def split(
    dataset: ClickDataset,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    """Per-user random train/validation/test partition.

    Each user's clicks are shuffled and cut at ``floor(r_train * k)`` and
    ``floor((r_train + r_val) * k)``. Users with fewer than 3 clicks keep
    everything in train. A zero validation ratio is allowed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or ratios[0] <= 0:
        raise DataError(f"invalid split ratios {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {sum(ratios)}")

    rng = np.random.default_rng(seed)
    bounds = np.searchsorted(dataset.users, np.arange(dataset.num_users + 1))
    parts = ([], [], [])
    owners = []
    # guard against 0.8 * 10 == 7.999...
    c1, c2 = ratios[0], ratios[0] + ratios[1]
    for u in range(dataset.num_users):
        items = dataset.items[bounds[u]:bounds[u + 1]]
        k = items.size
        if k == 0:
            continue
        owners.append(u)
        if k < 3:
            parts[0].append(items)
            parts[1].append(items[:0])
            parts[2].append(items[:0])
            continue
        items = items[rng.permutation(k)]
        a = int(math.floor(c1 * k + 1e-9))
        b = int(math.floor(c2 * k + 1e-9))
        parts[0].append(items[:a])
        parts[1].append(items[a:b])
        parts[2].append(items[b:])

    def view(chunks):
        if not chunks:
            return dataset.with_clicks([], [])
        us = np.repeat(np.asarray(owners, dtype=np.int64), [c.size for c in chunks])
        return dataset.with_clicks(us, np.concatenate(chunks))

    return DatasetSplit(view(parts[0]), view(parts[1]), view(parts[2]), seed=seed)


def build_matrix(clicks: ClickDataset) -> SparseClickMatrix:
    counts = np.bincount(clicks.users, minlength=clicks.num_users)
    indptr = np.zeros(clicks.num_users + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    # ClickDataset keeps pairs sorted by (user, item)
    return SparseClickMatrix(indptr, clicks.items.astype(np.int64), clicks.num_users, clicks.num_items)


def merge(*views: ClickDataset) -> ClickDataset:
    """Union of views that share id maps."""
    base = views[0]
    users = np.concatenate([v.users for v in views])
    items = np.concatenate([v.items for v in views])
    return base.with_clicks(users, items)


def dataset_stats(dataset: ClickDataset) -> dict:
    return {
        "users": dataset.num_users,
        "items": dataset.num_items,
        "clicks": dataset.num_clicks,
        "density_percent": 100.0 * dataset.density,
    }


def format_stats(stats: Mapping) -> str:
    """Render dataset statistics as a small two-column table."""
    lines = [
        f"#users   {stats['users']:>12,}",
        f"#items   {stats['items']:>12,}",
        f"#clicks  {stats['clicks']:>12,}",
        f"% clicks {stats['density_percent']:>11.2f}%",
    ]
    return "\n".join(lines)


SPLIT_NAMES = ("train", "validation", "test")


def write_split(split_: DatasetSplit, directory: Union[str, os.PathLike]) -> None:
    """Write three (user_raw_id, item_raw_id) CSVs plus the id maps."""
    os.makedirs(directory, exist_ok=True)
    for name in SPLIT_NAMES:
        view = getattr(split_, name)
        with open(os.path.join(directory, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_raw_id", "item_raw_id"])
            for u, i in zip(view.users.tolist(), view.items.tolist()):
                writer.writerow([view.user_ids[u], view.item_ids[i]])
    write_id_map(split_.train, os.path.join(directory, "id_map.json"))
    with open(os.path.join(directory, "split.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": split_.seed}, fh)


def write_id_map(dataset: ClickDataset, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"users": dataset.user_ids, "items": dataset.item_ids}, fh)


def read_id_map(path: Union[str, os.PathLike]) -> tuple:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return payload["users"], payload["items"]


def read_split(directory: Union[str, os.PathLike]) -> DatasetSplit:
    """Inverse of :func:`write_split`."""
    id_map = os.path.join(directory, "id_map.json")
    if not os.path.isfile(id_map):
        raise DataError(f"no id_map.json in {directory}")
    user_ids, item_ids = read_id_map(id_map)
    uidx = {raw: k for k, raw in enumerate(user_ids)}
    iidx = {raw: k for k, raw in enumerate(item_ids)}
    views = []
    for name in SPLIT_NAMES:
        path = os.path.join(directory, f"{name}.csv")
        records = load_interactions(path, user_col="user_raw_id", item_col="item_raw_id")
        try:
            us = [uidx[r.user_raw_id] for r in records]
            its = [iidx[r.item_raw_id] for r in records]
        except KeyError as exc:
            raise DataError(f"{path}: id {exc.args[0]!r} missing from id map") from None
        views.append(ClickDataset(us, its, user_ids, item_ids))
    seed = 0
    meta = os.path.join(directory, "split.json")
    if os.path.isfile(meta):
        with open(meta, encoding="utf-8") as fh:
            seed = json.load(fh).get("seed", 0)
    return DatasetSplit(*views, seed=seed)
