"""Multi-behavior interaction data: ingestion, splits, bias proxies, Jaccard.

Interaction files are UTF-8 text, one "user<TAB>item" pair per line (LF or
CRLF). External string ids are remapped to dense integers in first-seen
order across the behavior files, scanned in schema order.
"""

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_JACCARD_EPS = 1e-8


class DataError(ValueError):
    """Malformed or inconsistent interaction data."""


@dataclass(frozen=True)
class BehaviorSchema:
    """Ordered behavior labels and the index of the target behavior."""

    names: tuple
    target_index: int

    def __post_init__(self):
        if len(self.names) < 2:
            raise DataError("need at least 2 behaviors, got %d" % len(self.names))
        if len(set(self.names)) != len(self.names):
            raise DataError("behavior names must be unique: %r" % (self.names,))
        if not 0 <= self.target_index < len(self.names):
            raise DataError("target_index %d out of range" % self.target_index)

    @property
    def num_behaviors(self):
        return len(self.names)

    @property
    def target_name(self):
        return self.names[self.target_index]


@dataclass
class InteractionDataset:
    """Per-behavior user->item adjacency over dense integer ids."""

    schema: BehaviorSchema
    num_users: int
    num_items: int
    adj: list  # adj[k][u] = sorted np.int64 array of item ids
    user_ids: list = field(default_factory=list)  # dense id -> external string
    item_ids: list = field(default_factory=list)

    def items_of(self, u, k):
        return self.adj[k][u]

    def interaction_counts(self):
        """(user_counts MxK, item_counts NxK) from the adjacency lists."""
        K = self.schema.num_behaviors
        uc = np.zeros((self.num_users, K), dtype=np.int64)
        ic = np.zeros((self.num_items, K), dtype=np.int64)
        for k in range(K):
            for u in range(self.num_users):
                items = self.adj[k][u]
                uc[u, k] = items.size
                if items.size:
                    np.add.at(ic[:, k], items, 1)
        return uc, ic

    def edge_count(self, k):
        return int(sum(row.size for row in self.adj[k]))

    def validate(self):
        K = self.schema.num_behaviors
        if len(self.adj) != K:
            raise DataError("adjacency has %d behaviors, schema has %d" % (len(self.adj), K))
        for k in range(K):
            if len(self.adj[k]) != self.num_users:
                raise DataError("behavior %d adjacency has wrong user count" % k)
            for u in range(self.num_users):
                row = self.adj[k][u]
                if row.size and (row[-1] >= self.num_items or row[0] < 0):
                    raise DataError("item id out of range for user %d behavior %d" % (u, k))
                if row.size > 1 and np.any(np.diff(row) <= 0):
                    raise DataError("adjacency not sorted/duplicate-free for user %d behavior %d" % (u, k))


@dataclass
class SplitDataset:
    """Leave-one-out split: per user at most one held-out target item."""

    train: InteractionDataset
    test_positives: np.ndarray  # (M,), held-out target item id or -1
    seed: int

    def test_users(self):
        return np.flatnonzero(self.test_positives >= 0)


@dataclass
class BiasTable:
    """Relative-frequency bias proxies per entity and behavior."""

    user_bias: np.ndarray  # (M, K)
    item_bias: np.ndarray  # (N, K)


@dataclass
class JaccardTable:
    """Overlap of each behavior's item set with the target behavior's."""

    values: np.ndarray  # (M, K)
    epsilon: float


def load_dataset(paths, schema):
    """Read one interaction file per behavior into an InteractionDataset."""
    if len(paths) != schema.num_behaviors:
        raise DataError("got %d paths for %d behaviors" % (len(paths), schema.num_behaviors))
    user_map, item_map = {}, {}
    user_ids, item_ids = [], []
    edges = []  # per behavior: set of (u, i)
    for k, path in enumerate(paths):
        seen = set()
        try:
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.rstrip("\r\n")
                    if not line:
                        continue
                    fields = line.split("\t")
                    if len(fields) != 2:
                        raise DataError("%s:%d: expected 2 tab-separated fields, got %d"
                                        % (path, lineno, len(fields)))
                    us, vs = fields
                    u = user_map.get(us)
                    if u is None:
                        u = user_map[us] = len(user_map)
                        user_ids.append(us)
                    v = item_map.get(vs)
                    if v is None:
                        v = item_map[vs] = len(item_map)
                        item_ids.append(vs)
                    seen.add((u, v))
        except OSError as e:
            raise DataError("cannot read %s: %s" % (path, e)) from e
        edges.append(seen)
    if not any(edges):
        raise DataError("no interactions in any behavior file")
    M, N = len(user_map), len(item_map)
    adj = []
    for k in range(schema.num_behaviors):
        rows = [[] for _ in range(M)]
        for u, v in edges[k]:
            rows[u].append(v)
        adj.append([np.array(sorted(r), dtype=np.int64) for r in rows])
    ds = InteractionDataset(schema, M, N, adj, user_ids, item_ids)
    ds.validate()
    return ds


def split_leave_one_out(ds, seed):
    """Hold out one uniformly chosen target interaction per eligible user.

    Users with fewer than 2 target interactions keep all their data in train.
    """
    kt = ds.schema.target_index
    rng = np.random.default_rng(seed)
    test = np.full(ds.num_users, -1, dtype=np.int64)
    train_adj = [list(rows) for rows in ds.adj]
    for u in range(ds.num_users):
        items = ds.adj[kt][u]
        if items.size < 2:
            continue
        pick = int(rng.integers(items.size))
        test[u] = items[pick]
        train_adj[kt][u] = np.delete(items, pick)
    train = InteractionDataset(ds.schema, ds.num_users, ds.num_items, train_adj,
                               ds.user_ids, ds.item_ids)
    return SplitDataset(train, test, seed)


def compute_bias_table(ds):
    """Bias proxies: each entity's relative interaction frequency per behavior.

    Entities with zero interactions in every behavior get an all-zero row.
    """
    uc, ic = ds.interaction_counts()
    user_bias = _row_normalize(uc.astype(np.float64))
    item_bias = _row_normalize(ic.astype(np.float64))
    return BiasTable(user_bias, item_bias)


def _row_normalize(counts):
    totals = counts.sum(axis=1, keepdims=True)
    out = np.zeros_like(counts)
    nz = totals[:, 0] > 0
    out[nz] = counts[nz] / totals[nz]
    return out


def compute_jaccard(ds, epsilon=DEFAULT_JACCARD_EPS):
    """Smoothed Jaccard overlap of each behavior's items with the target's."""
    kt = ds.schema.target_index
    K = ds.schema.num_behaviors
    values = np.zeros((ds.num_users, K))
    for u in range(ds.num_users):
        target_items = ds.adj[kt][u]
        for k in range(K):
            items = ds.adj[k][u]
            inter = np.intersect1d(items, target_items, assume_unique=True).size
            union = items.size + target_items.size - inter
            values[u, k] = inter / (union + epsilon)
    return JaccardTable(values, epsilon)


def sample_negatives(split, u, n, rng):
    """Draw n items uniformly from those outside u's train target list."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ds = split.train
    positives = ds.adj[ds.schema.target_index][u]
    if positives.size >= ds.num_items:
        raise DataError("user %d has interacted with every item under the target behavior" % u)
    pos = set(positives.tolist())
    out = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        cand = int(rng.integers(ds.num_items))
        if cand not in pos:
            out[filled] = cand
            filled += 1
    return out


def save_id_maps(ds, path):
    """Persist the external-id ordering as JSON {"users": [...], "items": [...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"users": list(ds.user_ids), "items": list(ds.item_ids)}, fh)


def load_id_maps(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return list(doc["users"]), list(doc["items"])
