"""Test-time adaptation of unseen-class embeddings by soft correspondence.

A correspondence ``C`` (rows: embedded unseen descriptors ``A``, columns:
unlabeled test features ``U``) is found by conditional gradient on::

    ||C U - A||_F^2 + lambda_g * sum_j sum_c ||C[I_c, j]||_2

over ``{C >= 0, C 1 = 1, C^T 1 = n/o}``.  Each test sample then goes to
the class of its largest correspondence entry, and the class mean of its
assigned samples replaces the embedded descriptor.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .transport import Marginals, solve_transportation


@dataclass(frozen=True)
class AdaptConfig:
    """``groups`` maps class id to the row indices of ``A`` it owns.

    ``None`` means one row per class (singleton groups) with class ids
    ``0..n-1`` unless the caller supplies ``row_classes``.  ``gap_tol=None``
    resolves to ``1e-6`` times the initial objective.

    ``step_rule="open_loop"`` always takes the plain ``2/(t+2)`` step.  The
    default ``"guarded"`` takes the same step unless it would raise the
    objective, in which case it falls back to the minimizer along the step
    direction, so the objective trace never increases.
    """

    lambda_g: float = 0.1
    max_iters: int = 500
    gap_tol: float = None
    groups: dict = None
    step_rule: str = "guarded"

    def __post_init__(self):
        if self.lambda_g < 0:
            raise ValueError("lambda_g must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.gap_tol is not None and self.gap_tol < 0:
            raise ValueError("gap_tol must be non-negative")
        if self.step_rule not in ("guarded", "open_loop"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")

    def blocks(self, n_rows):
        """Row-index arrays, one per group, ordered by class id."""
        if self.groups is None:
            return [np.array([r]) for r in range(n_rows)]
        blocks = [np.asarray(self.groups[c], dtype=np.intp) for c in sorted(self.groups)]
        covered = np.sort(np.concatenate(blocks)) if blocks else np.array([], dtype=np.intp)
        if not np.array_equal(covered, np.arange(n_rows)):
            raise ValueError("groups must cover every row exactly once")
        return blocks

    def row_classes(self, n_rows):
        if self.groups is None:
            return np.arange(n_rows)
        out = np.empty(n_rows, dtype=np.int64)
        for c, rows in self.groups.items():
            out[np.asarray(rows, dtype=np.intp)] = c
        return out

    def to_dict(self):
        groups = None if self.groups is None else {str(k): list(map(int, v)) for k, v in self.groups.items()}
        return {"lambda_g": self.lambda_g, "max_iters": self.max_iters,
                "gap_tol": self.gap_tol, "groups": groups, "step_rule": self.step_rule}


@dataclass(frozen=True)
class CorrespondenceMatrix:
    values: np.ndarray
    row_classes: np.ndarray
    col_sample_ids: np.ndarray

    def feasibility_error(self):
        n, o = self.values.shape
        return max(float(np.max(np.abs(self.values.sum(axis=1) - 1.0))),
                   float(np.max(np.abs(self.values.sum(axis=0) - n / o))),
                   float(max(0.0, -self.values.min())))


@dataclass
class AdaptResult:
    C: CorrespondenceMatrix
    adapted: np.ndarray
    class_ids: tuple
    assignments: dict
    objective_trace: list = field(default_factory=list)  # rows (t, objective, gap)
    converged: bool = False

    def to_json_dict(self):
        return {
            "class_ids": [int(c) for c in self.class_ids],
            "adapted": self.adapted.tolist(),
            "assignments": {str(int(k)): int(v) for k, v in self.assignments.items()},
            "converged": self.converged,
            "trace": [{"iteration": t, "objective": f, "gap": g} for t, f, g in self.objective_trace],
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")


def load_adapt_json(path):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [int(c) for c in raw["class_ids"]], np.asarray(raw["adapted"], dtype=np.float64), raw


def group_lasso(C, blocks):
    return float(sum(np.sum(np.sqrt(np.sum(C[b] ** 2, axis=0))) for b in blocks))


def adapt_objective(C, U, A, cfg: AdaptConfig):
    C, U, A = (np.asarray(x, dtype=np.float64) for x in (C, U, A))
    if C.shape != (A.shape[0], U.shape[0]) or U.shape[1] != A.shape[1]:
        raise ValueError(f"shape mismatch: C{C.shape}, U{U.shape}, A{A.shape}")
    resid = C @ U - A
    value = float(np.sum(resid * resid))
    if cfg.lambda_g:
        value += cfg.lambda_g * group_lasso(C, cfg.blocks(C.shape[0]))
    return value


def adapt_gradient(C, U, A, cfg: AdaptConfig):
    """Gradient of :func:`adapt_objective`; zero subgradient on zero blocks."""
    C, U, A = (np.asarray(x, dtype=np.float64) for x in (C, U, A))
    grad = 2.0 * (C @ U - A) @ U.T
    if cfg.lambda_g:
        for b in cfg.blocks(C.shape[0]):
            block = C[b]
            norms = np.sqrt(np.sum(block * block, axis=0))
            safe = np.where(norms > 0, norms, 1.0)
            grad[b] += cfg.lambda_g * np.where(norms > 0, block / safe, 0.0)
    return grad


def step_size(t):
    return 2.0 / (t + 2.0)


def _guarded_step(C, direction, U, A, cfg, t, gap, obj):
    alpha = step_size(t)
    if adapt_objective(C + alpha * direction, U, A, cfg) <= obj:
        return alpha
    du = direction @ U
    curvature = float(np.sum(du * du))
    if curvature > 0:
        # minimizer of the linearized-gap quadratic model along the direction
        alpha = min(alpha, gap / (2.0 * curvature))
    for _ in range(60):
        if adapt_objective(C + alpha * direction, U, A, cfg) <= obj:
            return alpha
        alpha *= 0.5
    return 0.0


def frank_wolfe(U, A, cfg: AdaptConfig, row_classes=None, col_sample_ids=None, callback=None):
    """Conditional gradient from the uniform feasible point.

    Returns ``(CorrespondenceMatrix, trace, converged)``; trace rows are
    ``(t, objective at the iterate, duality gap)``.  ``callback(t, C)`` is
    called on every iterate, starting with ``t = 0``.
    """
    U = np.asarray(U, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    n, o = A.shape[0], U.shape[0]
    if n < 1 or o < 1:
        raise ValueError("need at least one descriptor row and one test sample")
    if o < n:
        warnings.warn(f"fewer test samples ({o}) than descriptor rows ({n})", stacklevel=2)
    marg = Marginals.correspondence(n, o)
    C = np.full((n, o), 1.0 / o)
    obj = adapt_objective(C, U, A, cfg)
    tol = 1e-6 * obj if cfg.gap_tol is None else cfg.gap_tol

    trace = []
    converged = False
    if callback is not None:
        callback(0, C)
    for t in range(1, cfg.max_iters + 1):
        grad = adapt_gradient(C, U, A, cfg)
        vertex = solve_transportation(grad, marg).values
        gap = float(np.sum(grad * (C - vertex)))
        trace.append((t, obj, gap))
        if gap <= tol:
            converged = True
            break
        direction = vertex - C
        if cfg.step_rule == "open_loop":
            alpha = step_size(t)
        else:
            alpha = _guarded_step(C, direction, U, A, cfg, t, gap, obj)
        C = C + alpha * direction
        obj = adapt_objective(C, U, A, cfg)
        if callback is not None:
            callback(t, C)

    rc = cfg.row_classes(n) if row_classes is None else np.asarray(row_classes)
    ids = np.arange(o) if col_sample_ids is None else np.asarray(col_sample_ids)
    return CorrespondenceMatrix(C, rc, ids), trace, converged


def assign_classes(C: CorrespondenceMatrix, groups=None):
    """Class of each column's largest entry; exact ties go to the lowest class id.

    ``groups`` (class id -> rows) overrides ``C.row_classes``.
    """
    values = C.values
    if groups is not None:
        rc = np.empty(values.shape[0], dtype=np.int64)
        for c, rows in groups.items():
            rc[np.asarray(rows, dtype=np.intp)] = c
    else:
        rc = np.asarray(C.row_classes)
    top = values.max(axis=0)
    out = np.empty(values.shape[1], dtype=np.int64)
    for j in range(values.shape[1]):
        out[j] = rc[values[:, j] == top[j]].min()
    return out


def adapted_descriptors(U, assigned, class_ids, fallback):
    """Per-class mean of the assigned rows of ``U``; ``fallback`` rows where empty."""
    U = np.asarray(U, dtype=np.float64)
    assigned = np.asarray(assigned)
    out = np.array(fallback, dtype=np.float64, copy=True)
    for r, c in enumerate(class_ids):
        mask = assigned == c
        if mask.any():
            out[r] = U[mask].mean(axis=0)
    return out


def adapt(U, A, class_ids, cfg: AdaptConfig = AdaptConfig(), sample_ids=None, fallback=None):
    """Full adaptation: correspondence, assignment, adapted class rows.

    ``A`` has one row per entry of ``class_ids`` unless ``cfg.groups`` says
    otherwise; ``fallback`` (default: per-class mean of ``A`` rows) is used
    for classes that receive no samples.
    """
    A = np.asarray(A, dtype=np.float64)
    class_ids = tuple(int(c) for c in class_ids)
    if cfg.groups is None:
        if A.shape[0] != len(class_ids):
            raise ValueError("A needs one row per class when no groups are given")
        cfg = dataclasses.replace(cfg, groups={c: [r] for r, c in enumerate(class_ids)})
    C, trace, converged = frank_wolfe(U, A, cfg, col_sample_ids=sample_ids)
    assigned = assign_classes(C)
    if fallback is None:
        fallback = np.vstack([A[cfg.groups[c]].mean(axis=0) for c in class_ids])
    adapted = adapted_descriptors(U, assigned, class_ids, fallback)
    assignments = dict(zip(C.col_sample_ids.tolist(), assigned.tolist()))
    return AdaptResult(C, adapted, class_ids, assignments, trace, converged)
