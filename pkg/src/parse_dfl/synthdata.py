"""Synthetic multimodal datasets with controllable information structure.

Each modality vector is three blocks:

  redundant block   same +-1 group pattern in every modality, scaled by
                    strength_redundant;
  synergy block     per-sample random bit shares, one per modality, whose
                    XOR equals a per-class codeword. Each share alone is
                    uniform and independent of the label, so the class
                    signal in this block exists only jointly;
  unique block      per-modality +-1 group patterns, scaled by
                    strength_unique.

For C > 2 the label factors into two complementary parts: the
redundant/unique patterns distinguish the marginal group y mod g with
g = ceil(C/2), while the synergy codeword carries the joint bit
y div g, replicated across the whole block for redundancy. Marginal
blocks alone identify the group, the joint block alone the superclass,
and only together the exact label; with C = 2 both parts carry the full
label, so each structure knob remains individually checkable. This keeps
the synergy component genuinely dominant in the decomposition sense
instead of being duplicated by the marginals.

Gaussian noise is added per dimension. Group codebooks use distinct bit
patterns whenever the block width allows, so every nonzero strength is
discriminative. Generation is a fixed sequence of draws from one seeded
stream, so a (spec, seed) pair is fully reproducible.

Datasets persist as CSV with header ``label,m0_0,..,m0_{d-1},m1_0,..``
(UTF-8, LF); floats use 17 significant digits so the round-trip is
bit-exact.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import seeds
from .errors import ConfigurationError, DataParseError, InfeasiblePartitionError

TEST_FRACTION = 0.2
DEFAULT_MIN_SHARD = 64          # 2 x default batch size
PARTITION_RETRY_CAP = 100


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the generator; strengths live in [0, 1]."""

    n_modalities: int = 2
    n_classes: int = 4
    dim_per_modality: int = 12
    strength_redundant: float = 0.3
    strength_unique: float = 0.3
    strength_synergy: float = 1.0
    noise_std: float = 0.5
    n_samples: int = 6000

    def __post_init__(self):
        if self.n_modalities < 1 or self.n_classes < 2 or self.n_samples < 1:
            raise ConfigurationError("need >= 1 modality, >= 2 classes, >= 1 sample")
        if self.dim_per_modality < 3:
            raise ConfigurationError("dim_per_modality must be >= 3 (one dim per block)")
        for s in (self.strength_redundant, self.strength_unique, self.strength_synergy):
            if not 0.0 <= s <= 1.0:
                raise ConfigurationError("strengths must lie in [0, 1]")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")
        if (self.strength_redundant == self.strength_unique == self.strength_synergy == 0.0
                and self.noise_std == 0.0):
            raise ConfigurationError("all-zero strengths with zero noise is degenerate")

    def block_dims(self):
        """(redundant, synergy, unique) widths; blocks are laid out in that
        order. The synergy share gets the wide middle block: joint structure
        needs room for codewords, while the redundant/unique class patterns
        are plain per-class sign vectors."""
        b = max(1, self.dim_per_modality // 6)
        return b, self.dim_per_modality - 2 * b, b


@dataclass
class Dataset:
    """Columnar sample store: one (n, d_m) array per modality."""

    features: list
    labels: np.ndarray
    n_classes: int

    @property
    def n_modalities(self):
        return len(self.features)

    @property
    def n_samples(self):
        return len(self.labels)

    def batch(self, indices, modalities):
        """(features-by-modality, labels) for the given sample indices."""
        idx = np.asarray(indices, dtype=np.int64)
        return {m: self.features[m][idx] for m in modalities}, self.labels[idx]

    def equals(self, other):
        return (self.n_classes == other.n_classes
                and np.array_equal(self.labels, other.labels)
                and len(self.features) == len(other.features)
                and all(np.array_equal(a, b) for a, b in zip(self.features, other.features)))


def _distinct_bit_patterns(rng, count, bits):
    """(count, bits) 0/1 array with distinct rows when 2^bits >= count."""
    if bits <= 62 and 2 ** bits >= count:
        codes = rng.choice(2 ** bits, size=count, replace=False)
        return ((codes[:, None] >> np.arange(bits)) & 1).astype(np.int64)
    return rng.integers(0, 2, size=(count, bits), dtype=np.int64)


def generate_dataset(spec, seed):
    """Deterministically build a Dataset from a SyntheticSpec and seed."""
    rng = seeds.stream(seed, seeds.DATA)
    n, m, c, d = spec.n_samples, spec.n_modalities, spec.n_classes, spec.dim_per_modality
    b_r, b_s, b_u = spec.block_dims()

    labels = rng.integers(0, c, size=n)
    n_groups = c if c <= 2 else (c + 1) // 2
    groups = labels % n_groups
    red_pat = 2.0 * _distinct_bit_patterns(rng, n_groups, b_r) - 1.0
    uniq_pat = np.stack([2.0 * _distinct_bit_patterns(rng, n_groups, b_u) - 1.0
                         for _ in range(m)])
    joint_bit = np.arange(c) if c == 2 else np.arange(c) // n_groups
    codewords = np.repeat(joint_bit[:, None], b_s, axis=1)

    shares = np.zeros((m, n, b_s), dtype=np.int64)
    if m > 1:
        shares[:m - 1] = rng.integers(0, 2, size=(m - 1, n, b_s))
    parity = np.bitwise_xor.reduce(shares[:m - 1], axis=0) if m > 1 else 0
    shares[m - 1] = np.bitwise_xor(codewords[labels], parity)

    noise = rng.normal(0.0, spec.noise_std, size=(m, n, d)) if spec.noise_std > 0 else 0.0

    features = []
    for mod in range(m):
        x = np.zeros((n, d))
        x[:, :b_r] = spec.strength_redundant * red_pat[groups]
        x[:, b_r:b_r + b_s] = spec.strength_synergy * (2.0 * shares[mod] - 1.0)
        x[:, b_r + b_s:] = spec.strength_unique * uniq_pat[mod][groups]
        if spec.noise_std > 0:
            x += noise[mod]
        features.append(x)
    return Dataset(features, labels, c)


# ---------------------------------------------------------------------------
# non-IID partitioning
# ---------------------------------------------------------------------------

@dataclass
class PartitionAssignment:
    """Disjoint per-agent sample shards; train and test are split 80/20
    up front and each class is divided by the same Dirichlet proportions,
    so an agent's test shard mirrors its train skew."""

    train_shards: list
    test_shards: list
    alpha: float

    def all_shards(self):
        return self.train_shards + self.test_shards


def _split_by_proportions(indices, proportions):
    cuts = np.floor(np.cumsum(proportions)[:-1] * len(indices)).astype(np.int64)
    return np.split(indices, cuts)


def dirichlet_partition(dataset, n_agents, alpha, seed,
                        min_shard=DEFAULT_MIN_SHARD, retry_cap=PARTITION_RETRY_CAP):
    """Assign samples to agents with per-class Dirichlet(alpha) proportions.

    Proportion matrices that leave any agent's train shard below
    ``min_shard`` are redrawn, up to ``retry_cap`` times.
    """
    if n_agents < 1:
        raise ConfigurationError("need at least one agent")
    if alpha <= 0:
        raise ConfigurationError("alpha must be > 0")
    rng = seeds.stream(seed, seeds.PARTITION)
    n = dataset.n_samples
    perm = rng.permutation(n)
    n_train = n - int(round(TEST_FRACTION * n))
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    train_by_class = [train_idx[dataset.labels[train_idx] == c] for c in range(dataset.n_classes)]
    test_by_class = [test_idx[dataset.labels[test_idx] == c] for c in range(dataset.n_classes)]

    for _ in range(retry_cap + 1):
        props = rng.dirichlet(np.full(n_agents, alpha), size=dataset.n_classes)
        train_shards = [[] for _ in range(n_agents)]
        test_shards = [[] for _ in range(n_agents)]
        for c in range(dataset.n_classes):
            for agent, part in enumerate(_split_by_proportions(train_by_class[c], props[c])):
                train_shards[agent].append(part)
            for agent, part in enumerate(_split_by_proportions(test_by_class[c], props[c])):
                test_shards[agent].append(part)
        train_shards = [np.sort(np.concatenate(s)) for s in train_shards]
        test_shards = [np.sort(np.concatenate(s)) for s in test_shards]
        if min(len(s) for s in train_shards) >= min_shard:
            return PartitionAssignment(train_shards, test_shards, alpha)
    raise InfeasiblePartitionError(
        f"could not give every agent >= {min_shard} train samples "
        f"within {retry_cap} redraws (n_agents={n_agents}, alpha={alpha})")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_dataset(dataset, path):
    """Write the CSV form; floats carry 17 significant digits."""
    cols = ["label"]
    for m in range(dataset.n_modalities):
        cols += [f"m{m}_{j}" for j in range(dataset.features[m].shape[1])]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(dataset.n_samples):
            row = [str(int(dataset.labels[i]))]
            for m in range(dataset.n_modalities):
                row += [format(v, ".17g") for v in dataset.features[m][i]]
            fh.write(",".join(row) + "\n")


def _parse_header(header, path):
    cols = [c.strip() for c in header.split(",")]
    if not cols or cols[0] != "label":
        raise DataParseError("first column must be 'label'", path=path, line=1)
    dims = []
    for name in cols[1:]:
        try:
            mod_s, dim_s = name.split("_")
            mod, dim = int(mod_s.removeprefix("m")), int(dim_s)
            if not mod_s.startswith("m"):
                raise ValueError
        except ValueError:
            raise DataParseError(f"bad feature column name {name!r}", path=path, line=1) from None
        if mod == len(dims):
            dims.append(0)
        elif mod != len(dims) - 1:
            raise DataParseError(f"modality columns out of order at {name!r}", path=path, line=1)
        if dim != dims[mod]:
            raise DataParseError(f"feature columns out of order at {name!r}", path=path, line=1)
        dims[mod] += 1
    if not dims or any(d == 0 for d in dims):
        raise DataParseError("no feature columns", path=path, line=1)
    return dims


def load_dataset(path):
    """Inverse of save_dataset. n_classes is inferred as max(label)+1."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise DataParseError("empty dataset file", path=path, line=1)
    dims = _parse_header(lines[0], path)
    n_cols = 1 + sum(dims)

    labels, rows = [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        cells = ln.split(",")
        if len(cells) != n_cols:
            raise DataParseError(
                f"expected {n_cols} columns, got {len(cells)}", path=path, line=lineno)
        try:
            labels.append(int(cells[0]))
            rows.append([float(c) for c in cells[1:]])
        except ValueError as exc:
            raise DataParseError(str(exc), path=path, line=lineno) from None
        if labels[-1] < 0:
            raise DataParseError("labels must be >= 0", path=path, line=lineno)
    if not rows:
        raise DataParseError("dataset has a header but no samples", path=path, line=2)

    table = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    features, offset = [], 0
    for d in dims:
        features.append(np.ascontiguousarray(table[:, offset:offset + d]))
        offset += d
    return Dataset(features, labels, int(labels.max()) + 1)


def empirical_joint(dataset, indices=None):
    """Binarize features per dimension (> 0) and tabulate the empirical
    joint distribution of (X_1, .., X_n, Y). Intended for PID checks on
    low-dimensional datasets; cardinality per modality is 2^d."""
    idx = np.arange(dataset.n_samples) if indices is None else np.asarray(indices)
    cards = []
    symbols = []
    for m in range(dataset.n_modalities):
        bits = (dataset.features[m][idx] > 0).astype(np.int64)
        d = bits.shape[1]
        if d > 16:
            raise ConfigurationError("empirical joint only supports <= 16 dims per modality")
        symbols.append(bits @ (1 << np.arange(d)))
        cards.append(2 ** d)
    table = np.zeros(tuple(cards) + (dataset.n_classes,))
    coords = tuple(symbols) + (dataset.labels[idx],)
    np.add.at(table, coords, 1.0)
    table /= len(idx)
    from .pid import JointDistribution
    return JointDistribution(table)
