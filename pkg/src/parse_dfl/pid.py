"""Partial information decomposition over discrete joint distributions.

Splits the mutual information between n source variables (modalities)
X_1..X_n and a target Y into redundant, unique, and synergistic parts,
all in bits (base-2 logs):

    specific information   I(X_i; Y=y) = sum_x p(x|y) log2( p(y|x) / p(y) )
    I_min(A; Y)            = sum_y p(y) min_{i in A} I(X_i; Y=y)
    I_max(A; Y)            = sum_y p(y) max_{i in A} I(X_i; Y=y)

    R(Y)      = I_min({X_1..X_n}; Y)
    S(Y)      = I(X_1..X_n; Y) - I_max({X_1..X_n}; Y)
    U_{X_i}(Y) = I(X_i; Y) - I_min({X_1..X_n} \\ X_i; Y)

The unique term is computed exactly as written above even though it can
go negative (e.g. a pure unique channel where one modality carries all
the information); the decomposition identity then fails and the  gap is
reported in ``PidResult.residual`` instead of being renormalized away.

Probabilities below ``ZERO_PROB`` are treated as exact zeros inside log
terms (the 0*log 0 = 0 convention, made robust to rounding noise).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataParseError, DegenerateInputError

ZERO_PROB = 1e-15
PROB_SUM_TOL = 1e-12
CSV_SUM_TOL = 1e-9


@dataclass(frozen=True)
class JointDistribution:
    """Dense probability table p(x_1, .., x_n, y).

    ``probs`` has shape (card_1, .., card_n, label_card): one axis per
    modality plus a trailing label axis. Entries must be non-negative and
    sum to 1 within ``PROB_SUM_TOL``.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim < 2:
            raise ConfigurationError("joint table needs >= 1 modality axis plus the label axis")
        if np.any(probs < 0):
            raise ConfigurationError("joint table has negative entries")
        total = probs.sum()
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ConfigurationError(f"joint table sums to {total!r}, not 1")

    @property
    def n_modalities(self):
        return self.probs.ndim - 1

    @property
    def modality_cardinalities(self):
        return self.probs.shape[:-1]

    @property
    def label_cardinality(self):
        return self.probs.shape[-1]

    def label_marginal(self):
        return self.probs.sum(axis=tuple(range(self.n_modalities)))


@dataclass(frozen=True)
class PidResult:
    """Decomposition in bits. ``residual`` = total - R - S - sum(U)."""

    total_mi: float
    redundant: float
    synergistic: float
    unique: tuple
    residual: float

    def as_dict(self):
        return {
            "total_mi": self.total_mi,
            "redundant": self.redundant,
            "synergistic": self.synergistic,
            "unique": list(self.unique),
            "residual": self.residual,
        }


def _xlog2_ratio(p, num, den):
    """Sum of p * log2(num/den) over cells where p is effectively nonzero."""
    mask = p > ZERO_PROB
    out = np.zeros_like(p)
    out[mask] = p[mask] * (np.log2(num[mask]) - np.log2(den[mask]))
    return float(out.sum())


def mutual_information(dist, subset):
    """I(X_subset; Y) in bits. ``subset`` holds 0-based modality indices."""
    subset = sorted(set(int(i) for i in subset))
    if not subset:
        raise ConfigurationError("mutual_information needs a non-empty modality subset")
    n = dist.n_modalities
    if subset[0] < 0 or subset[-1] >= n:
        raise ConfigurationError(f"modality indices {subset} out of range for n={n}")
    drop = tuple(i for i in range(n) if i not in subset)
    p_xy = dist.probs.sum(axis=drop) if drop else dist.probs
    p_x = p_xy.sum(axis=-1, keepdims=True)
    p_y = p_xy.sum(axis=tuple(range(p_xy.ndim - 1)), keepdims=True)
    return _xlog2_ratio(p_xy, p_xy, p_x * p_y)


def specific_information(dist, i, y):
    """I(X_i; Y=y) in bits: sum_x p(x|y) [log2 p(y|x) - log2 p(y)]."""
    i, y = int(i), int(y)
    if not 0 <= i < dist.n_modalities:
        raise ConfigurationError(f"modality index {i} out of range")
    if not 0 <= y < dist.label_cardinality:
        raise ConfigurationError(f"label value {y} out of range")
    drop = tuple(j for j in range(dist.n_modalities) if j != i)
    p_xy = dist.probs.sum(axis=drop) if drop else dist.probs
    p_y = float(p_xy.sum(axis=0)[y])
    if p_y <= ZERO_PROB:
        raise DegenerateInputError(f"specific information conditioned on p(y={y}) = 0")
    p_x = p_xy.sum(axis=1)
    col = p_xy[:, y]
    # p(x|y) log2( p(x,y) / (p(x) p(y)) ), zero cells dropped
    return _xlog2_ratio(col / p_y, col, p_x * p_y)


def _specific_information_table(dist):
    """(n_modalities, label_card) table of I(X_i; Y=y); 0 where p(y)=0."""
    n, l = dist.n_modalities, dist.label_cardinality
    p_y = dist.label_marginal()
    table = np.zeros((n, l))
    for i in range(n):
        for y in range(l):
            if p_y[y] > ZERO_PROB:
                table[i, y] = specific_information(dist, i, y)
    return table


def pid_decompose(dist):
    """Full decomposition into (total, R, S, U_1..U_n, residual), in bits."""
    n = dist.n_modalities
    if n < 2:
        raise ConfigurationError("decomposition needs at least 2 modalities")
    p_y = dist.label_marginal()
    si = _specific_information_table(dist)

    total = mutual_information(dist, range(n))
    redundant = float(p_y @ si.min(axis=0))
    i_max = float(p_y @ si.max(axis=0))
    synergistic = total - i_max

    unique = []
    for i in range(n):
        rest = [j for j in range(n) if j != i]
        i_min_rest = float(p_y @ si[rest].min(axis=0))
        unique.append(mutual_information(dist, [i]) - i_min_rest)

    residual = total - redundant - synergistic - sum(unique)
    return PidResult(total, redundant, synergistic, tuple(unique), residual)


# ---------------------------------------------------------------------------
# CSV input for the standalone calculator
# ---------------------------------------------------------------------------

def read_distribution_csv(path):
    """Load a joint table from CSV columns x_1,..,x_n,y,p (header required).

    Variable values are non-negative integers; cardinalities are inferred
    as max+1 per column. Unlisted cells default to probability 0; listed
    probabilities must sum to 1 within ``CSV_SUM_TOL``.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataParseError("empty distribution file", path=path, line=1)
    header = [c.strip() for c in lines[0].split(",")]
    n = len(header) - 2
    expected = [f"x_{k}" for k in range(1, n + 1)] + ["y", "p"]
    if n < 1 or header != expected:
        raise DataParseError(
            f"header must be x_1,..,x_n,y,p; got {','.join(header)}", path=path, line=1)

    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in ln.split(",")]
        if len(cells) != n + 2:
            raise DataParseError(
                f"expected {n + 2} columns, got {len(cells)}", path=path, line=lineno)
        try:
            values = [int(c) for c in cells[:-1]]
            prob = float(cells[-1])
        except ValueError as exc:
            raise DataParseError(str(exc), path=path, line=lineno) from None
        if any(v < 0 for v in values):
            raise DataParseError("variable values must be >= 0", path=path, line=lineno)
        if prob < 0:
            raise DataParseError("probabilities must be >= 0", path=path, line=lineno)
        rows.append((lineno, values, prob))
    if not rows:
        raise DataParseError("no probability rows", path=path, line=2)

    cards = [max(r[1][k] for r in rows) + 1 for k in range(n + 1)]
    table = np.zeros(cards)
    seen = {}
    for lineno, values, prob in rows:
        key = tuple(values)
        if key in seen:
            raise DataParseError(
                f"duplicate cell {key} (first at line {seen[key]})", path=path, line=lineno)
        seen[key] = lineno
        table[key] = prob
    total = table.sum()
    if abs(total - 1.0) > CSV_SUM_TOL:
        raise DataParseError(f"probabilities sum to {total!r}, not 1", path=path)
    # renormalize the CSV rounding slack so the table meets the strict invariant
    table /= total
    return JointDistribution(table)
