"""Multi-objective selection over solver performance records.

A record is a (config id, PerformanceVector) pair with six minimized
criteria.  ``pareto_set`` extracts the non-dominated records, ``rescale``
maps each criterion affinely onto [0, 1] over the Pareto members, and
``preference_rank`` orders members by a weighted sum of the rescaled
coordinates.  ``rediscover`` inverts that selection: given a Pareto member
it searches for simplex weights under which the member attains the minimum
weighted sum, via a small dense LP.  Members for which the LP is infeasible
sit in a non-convex region of the front and cannot be produced by any
weighted-sum preference.

Domination is the componentwise order: x' dominates x when x' <= x in every
criterion and x' < x in at least one.  All operations are pure and keep the
input record order; indices returned refer to positions in the record list.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

CRITERIA = (
    "rel_error",
    "wall_seconds",
    "iterations",
    "peak_megabytes",
    "macs",
    "setup_seconds",
)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NUMERIC_ERROR = "numeric_error"

_TIE_TOL = 1e-9
_SUM_TOL = 1e-12
_PIVOT_TOL = 1e-11


@dataclass(frozen=True)
class PerformanceVector:
    """One solver run's measured criteria, all finite and nonnegative."""

    rel_error: float
    wall_seconds: float
    iterations: float
    peak_megabytes: float
    macs: float
    setup_seconds: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError("performance criteria must be finite")
        if np.any(vals < 0.0):
            raise ValueError("performance criteria must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in CRITERIA], dtype=np.float64)


@dataclass(frozen=True)
class PreferenceWeights:
    """Simplex weights: entries in [0, 1] summing to 1."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("weights must form a nonempty vector")
        if not np.all(np.isfinite(vals)):
            raise ValueError("weights must be finite")
        if np.any(vals < 0.0) or np.any(vals > 1.0):
            raise ValueError("weights must lie in [0, 1]")
        if abs(float(vals.sum()) - 1.0) > _SUM_TOL:
            raise ValueError("weights must sum to 1")

    @classmethod
    def uniform(cls, d: int = len(CRITERIA)) -> "PreferenceWeights":
        return cls(np.full(d, 1.0 / d))

    @classmethod
    def parse(cls, text: str) -> "PreferenceWeights":
        """Comma-separated reals, normalized by their sum."""
        parts = [p.strip() for p in text.split(",")]
        raw = np.array([float(p) for p in parts], dtype=np.float64)
        total = float(raw.sum())
        if not np.isfinite(total) or total <= 0.0 or np.any(raw < 0.0):
            raise ValueError("weights must be nonnegative with a positive sum")
        return cls(raw / total)


@dataclass(frozen=True)
class ParetoFront:
    """Records with their non-dominated index set and, once rescaled, the
    unit-box coordinates of the Pareto members."""

    records: tuple[tuple[str, PerformanceVector], ...]
    pareto_indices: np.ndarray
    rescaled: np.ndarray | None = None
    degenerate: tuple[bool, ...] | None = None

    @property
    def pareto_ids(self) -> tuple[str, ...]:
        return tuple(self.records[i][0] for i in self.pareto_indices)

    def member_position(self, index: int) -> int:
        """Position of records index ``index`` within the Pareto ordering."""
        pos = np.searchsorted(self.pareto_indices, index)
        if pos >= len(self.pareto_indices) or self.pareto_indices[pos] != index:
            raise ValueError(f"record {index} is not Pareto optimal")
        return int(pos)


@dataclass(frozen=True)
class PreferenceRanking:
    indices: tuple[int, ...]
    ids: tuple[str, ...]
    scores: tuple[float, ...]
    clipped: bool


@dataclass(frozen=True)
class RediscoveryResult:
    status: str
    weights: PreferenceWeights | None = None


def _as_matrix(records) -> np.ndarray:
    if isinstance(records, np.ndarray):
        mat = np.asarray(records, dtype=np.float64)
    else:
        rows = []
        for rec in records:
            if isinstance(rec, PerformanceVector):
                rows.append(rec.as_array())
            elif isinstance(rec, tuple) and len(rec) == 2 and isinstance(rec[1], PerformanceVector):
                rows.append(rec[1].as_array())
            else:
                rows.append(np.asarray(rec, dtype=np.float64))
        mat = np.array(rows, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0 or mat.shape[1] == 0:
        raise ValueError("records must form a nonempty 2-d criteria matrix")
    if np.any(np.isnan(mat)):
        raise ValueError("criteria contain NaN")
    if not np.all(np.isfinite(mat)):
        raise ValueError("criteria must be finite")
    return mat


def pareto_set(records) -> np.ndarray:
    """Indices of the non-dominated records, ascending.

    Scans in lexicographic order: any dominator of a point precedes it in
    that order, and if a point is dominated at all it is dominated by some
    member of the running non-dominated archive (domination is transitive),
    so each point is checked against the archive only.
    """
    mat = _as_matrix(records)
    n, d = mat.shape
    order = np.lexsort(mat.T[::-1])
    archive = np.empty((0, d))
    archive_idx: list[int] = []
    for i in order:
        x = mat[i]
        if archive.shape[0]:
            le = (archive <= x).all(axis=1)
            lt = (archive < x).any(axis=1)
            if np.any(le & lt):
                continue
        archive = np.vstack([archive, x])
        archive_idx.append(int(i))
    return np.array(sorted(archive_idx), dtype=np.int64)


def build_front(records) -> ParetoFront:
    """Pareto extraction plus rescaling in one step."""
    recs = tuple((str(cid), vec) for cid, vec in records)
    front = ParetoFront(recs, pareto_set(recs))
    return rescale(front)


def rescale(front: ParetoFront) -> ParetoFront:
    """Affine map of each criterion onto [0, 1] over the Pareto members.

    The per-criterion minimum lands exactly on 0 and the maximum on 1.  A
    criterion constant across the front carries no selection signal; its
    coordinate is zeroed for every member and flagged, which makes any
    weight on it inert.
    """
    if len(front.pareto_indices) < 2:
        raise ValueError("rescaling needs at least 2 Pareto members")
    vals = np.array([front.records[i][1].as_array() for i in front.pareto_indices])
    lo = vals.min(axis=0)
    hi = vals.max(axis=0)
    span = hi - lo
    flags = span == 0.0
    safe = np.where(flags, 1.0, span)
    scaled = (vals - lo) / safe
    scaled[:, flags] = 0.0
    return replace(front, rescaled=scaled, degenerate=tuple(bool(f) for f in flags))


def preference_rank(front: ParetoFront, weights: PreferenceWeights, k: int) -> PreferenceRanking:
    """Top-k Pareto members by ascending weighted sum of rescaled criteria.

    Ties are broken by config id.  Asking for more members than the front
    holds returns them all with ``clipped`` set.
    """
    if front.rescaled is None:
        raise ValueError("front is not rescaled")
    if k < 1:
        raise ValueError("k must be at least 1")
    if weights.values.shape[0] != front.rescaled.shape[1]:
        raise ValueError("weights length does not match criteria count")
    scores = front.rescaled @ weights.values
    order = sorted(range(len(scores)), key=lambda p: (scores[p], front.records[front.pareto_indices[p]][0]))
    clipped = k > len(order)
    top = order[: min(k, len(order))]
    return PreferenceRanking(
        indices=tuple(int(front.pareto_indices[p]) for p in top),
        ids=tuple(front.records[front.pareto_indices[p]][0] for p in top),
        scores=tuple(float(scores[p]) for p in top),
        clipped=clipped,
    )


def rediscover(front: ParetoFront, j: int) -> RediscoveryResult:
    """Search for simplex weights making Pareto member ``j`` the argmin.

    Solves: minimize lambda . f'(j) subject to lambda . f'(j) <= lambda .
    f'(i) for every other member, lambda on the probability simplex.  The
    simplex is restricted to the non-degenerate criteria: a degenerate
    coordinate scores zero for everyone, so unrestricted weights could park
    all their mass there and tie any member into trivial feasibility.  A
    feasible solution is verified to win (or tie within 1e-9) before being
    returned; infeasibility means no weighted-sum preference can select j.
    """
    if front.rescaled is None:
        raise ValueError("front is not rescaled")
    pos = front.member_position(j)
    f = front.rescaled
    m, d = f.shape
    live = [col for col in range(d) if not front.degenerate[col]]
    if not live:
        # all members share one point; everyone ties at every weighting
        return RediscoveryResult(FEASIBLE, PreferenceWeights.uniform(d))
    fl = f[:, live]
    others = [p for p in range(m) if p != pos]
    a_ub = fl[pos][None, :] - fl[others] if others else None
    b_ub = np.zeros(len(others)) if others else None
    res = simplex_solve(
        fl[pos],
        a_ub=a_ub,
        b_ub=b_ub,
        a_eq=np.ones((1, len(live))),
        b_eq=np.array([1.0]),
    )
    if res.status == "infeasible":
        return RediscoveryResult(INFEASIBLE)
    if res.status != "optimal":
        return RediscoveryResult(NUMERIC_ERROR)
    lam = np.zeros(d)
    lam[live] = np.clip(res.x, 0.0, 1.0)
    total = float(lam.sum())
    if not np.isfinite(total) or abs(total - 1.0) > _TIE_TOL:
        return RediscoveryResult(NUMERIC_ERROR)
    lam = lam / total
    scores = f @ lam
    if scores[pos] > scores.min() + _TIE_TOL:
        return RediscoveryResult(NUMERIC_ERROR)
    return RediscoveryResult(FEASIBLE, PreferenceWeights(lam))


# --- dense two-phase simplex ---


@dataclass(frozen=True)
class SimplexResult:
    status: str  # optimal | infeasible | unbounded | numeric
    x: np.ndarray | None = None
    value: float | None = None


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    for i in range(tab.shape[0]):
        if i != row and tab[i, col] != 0.0:
            tab[i] -= tab[i, col] * tab[row]


def _run_simplex(tab: np.ndarray, basis: np.ndarray, cost: np.ndarray, max_pivots: int) -> str:
    """Bland's-rule simplex on a row-reduced tableau; cost covers all columns."""
    m, w = tab.shape
    ncols = w - 1
    for _ in range(max_pivots):
        red = cost - cost[basis] @ tab[:, :ncols]
        enter = -1
        for jj in range(ncols):
            if red[jj] < -_PIVOT_TOL:
                enter = jj
                break
        if enter < 0:
            return "optimal"
        leave = -1
        best = np.inf
        for i in range(m):
            aij = tab[i, enter]
            if aij > _PIVOT_TOL:
                ratio = tab[i, -1] / aij
                if ratio < best - _PIVOT_TOL or (
                    abs(ratio - best) <= _PIVOT_TOL and (leave < 0 or basis[i] < basis[leave])
                ):
                    best = ratio
                    leave = i
        if leave < 0:
            return "unbounded"
        _pivot(tab, leave, enter)
        basis[leave] = enter
        if not np.all(np.isfinite(tab)):
            return "numeric"
    return "numeric"


def simplex_solve(
    c,
    a_ub=None,
    b_ub=None,
    a_eq=None,
    b_eq=None,
    max_pivots: int = 20000,
) -> SimplexResult:
    """Minimize c.x subject to a_ub x <= b_ub, a_eq x = b_eq, x >= 0.

    Dense two-phase tableau simplex.  Bland's smallest-index rule on both
    the entering and leaving choices guarantees termination; the pivot cap
    is only a guard against numerical stalls.
    """
    c = np.asarray(c, dtype=np.float64)
    n = c.shape[0]
    rows = []
    rhs = []
    slack_rows = []
    if a_ub is not None:
        a_ub = np.atleast_2d(np.asarray(a_ub, dtype=np.float64))
        b_ub = np.atleast_1d(np.asarray(b_ub, dtype=np.float64))
        for r in range(a_ub.shape[0]):
            rows.append(a_ub[r])
            rhs.append(b_ub[r])
            slack_rows.append(len(rows) - 1)
    if a_eq is not None:
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=np.float64))
        b_eq = np.atleast_1d(np.asarray(b_eq, dtype=np.float64))
        for r in range(a_eq.shape[0]):
            rows.append(a_eq[r])
            rhs.append(b_eq[r])
    m = len(rows)
    if m == 0:
        # only the nonnegativity cone: x = 0 unless some cost is negative
        if np.any(c < -_PIVOT_TOL):
            return SimplexResult("unbounded")
        return SimplexResult("optimal", np.zeros(n), 0.0)

    a = np.array(rows, dtype=np.float64)
    b = np.array(rhs, dtype=np.float64)
    nslack = len(slack_rows)
    slack_col = {row: n + pos for pos, row in enumerate(slack_rows)}

    full = np.zeros((m, n + nslack))
    full[:, :n] = a
    for row, colj in slack_col.items():
        full[row, colj] = 1.0
    neg = b < 0.0
    full[neg] *= -1.0
    b = np.abs(b)

    # initial basis: the slack where its column survived the sign flip,
    # an artificial elsewhere
    basis = np.empty(m, dtype=np.int64)
    art_cols = []
    for i in range(m):
        if i in slack_col and not neg[i]:
            basis[i] = slack_col[i]
        else:
            art_cols.append(i)
    ncols = n + nslack + len(art_cols)
    tab = np.zeros((m, ncols + 1))
    tab[:, : n + nslack] = full
    tab[:, -1] = b
    for pos, i in enumerate(art_cols):
        colj = n + nslack + pos
        tab[i, colj] = 1.0
        basis[i] = colj

    if art_cols:
        phase1 = np.zeros(ncols)
        phase1[n + nslack :] = 1.0
        status = _run_simplex(tab, basis, phase1, max_pivots)
        if status != "optimal":
            return SimplexResult("numeric")
        if float(phase1[basis] @ tab[:, -1]) > _TIE_TOL:
            return SimplexResult("infeasible")
        # pivot lingering zero-level artificials out; an all-zero row is a
        # redundant constraint and is dropped
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= n + nslack:
                target = -1
                for jj in range(n + nslack):
                    if abs(tab[i, jj]) > _PIVOT_TOL:
                        target = jj
                        break
                if target < 0:
                    keep[i] = False
                else:
                    _pivot(tab, i, target)
                    basis[i] = target
        tab = tab[keep]
        basis = basis[keep]

    tab = np.hstack([tab[:, : n + nslack], tab[:, -1:]])
    cost = np.zeros(n + nslack)
    cost[:n] = c
    status = _run_simplex(tab, basis, cost, max_pivots)
    if status != "optimal":
        return SimplexResult(status)
    x = np.zeros(n + nslack)
    x[basis] = tab[:, -1]
    return SimplexResult("optimal", x[:n], float(c @ x[:n]))


# --- record CSV import/export ---


def load_records(path: str | Path) -> list[tuple[str, PerformanceVector]]:
    """Read (config id, criteria) rows from a CSV with a naming header.

    Lines starting with '#' are comments.  Extra columns are ignored, so a
    full sweep results file loads directly.  Rows marked converged=false or
    with an empty criteria cell are runs without a usable measurement and
    are skipped.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} has no header row")
        cols = {name: i for i, name in enumerate(header)}
        missing = [name for name in ("config_id", *CRITERIA) if name not in cols]
        if missing:
            raise ValueError(f"{path} lacks columns: {', '.join(missing)}")
        conv = cols.get("converged")
        records = []
        for row in reader:
            if not row:
                continue
            if conv is not None and row[conv].strip().lower() == "false":
                continue
            cells = [row[cols[name]].strip() for name in CRITERIA]
            if any(cell == "" for cell in cells):
                continue
            vec = PerformanceVector(*(float(cell) for cell in cells))
            records.append((row[cols["config_id"]], vec))
    return records


def save_records(path: str | Path, records) -> None:
    """Write records as CSV with the criteria header."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("config_id", *CRITERIA))
        for cid, vec in records:
            writer.writerow((cid, *(repr(float(v)) for v in vec.as_array())))
