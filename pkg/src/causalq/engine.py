"""Model analysis and tabulation.

Validation and the decision procedures share one preprocessing step: evaluate
every equation over the full grid of its arguments (this is the exhaustive
totality check), detect which arguments the equation actually responds to,
order the endogenous variables topologically by that dependence relation, and
build per-variable masked tables
    (parent value indices, with "unconstrained" as an extra slot) -> forced value index or -1.

A masked-table entry answers: given that these parents are pinned and the
rest are free, is the equation's output already determined?  All relations in
this package are decided by composing such lookups.
"""

from __future__ import annotations

import os
import weakref
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .core import (
    Context,
    Model,
    PartialAssignment,
    RangeViolation,
    ValidationReport,
)
from .errors import BindingError, EvaluationError, GuardExceeded, InvalidModelError

DEFAULT_MAX_EVALS = 10_000_000


def max_evals() -> int:
    raw = os.environ.get("CAUSALQ_MAX_EVALS", "")
    return int(raw) if raw else DEFAULT_MAX_EVALS


@dataclass
class Packed:
    """Flat arrays consumed by the kernels."""

    n_exo: int
    n_endo: int
    parents_flat: np.ndarray
    parents_off: np.ndarray
    strides_flat: np.ndarray
    tables_flat: np.ndarray
    tables_off: np.ndarray


class Tabulated:
    """Index-space view of a valid model plus the kernel dispatch."""

    def __init__(self, model: Model, topo_endo: tuple[str, ...],
                 parent_names: dict[str, tuple[str, ...]],
                 base_tables: dict[str, np.ndarray], backend: Optional[str] = None):
        sig = model.signature
        self.model = model
        self.names: tuple[str, ...] = tuple(sig.exogenous) + topo_endo
        self.index = {n: i for i, n in enumerate(self.names)}
        self.n_exo = len(sig.exogenous)
        self.n_endo = len(topo_endo)
        self.n_vars = self.n_exo + self.n_endo
        self.values = [sig.range[n] for n in self.names]
        self.val_index = [{v: i for i, v in enumerate(vals)} for vals in self.values]
        self.sizes = np.array([len(v) for v in self.values], dtype=np.int64)
        self.backend = kernels.resolve_backend(backend)

        self.parents: list[np.ndarray] = []
        self.strides: list[np.ndarray] = []
        self.tables: list[np.ndarray] = []
        budget = max_evals()
        for e, name in enumerate(topo_endo):
            pa = sorted(self.index[p] for p in parent_names[name])
            pa_arr = np.array(pa, dtype=np.int64)
            dims = [int(self.sizes[p]) + 1 for p in pa]
            total = 1
            for d in dims:
                total *= d
            if total > budget:
                raise GuardExceeded(
                    f"masked table for {name!r} needs {total} entries "
                    f"(> {budget}); raise CAUSALQ_MAX_EVALS to allow")
            st = np.ones(len(pa), dtype=np.int64)
            for k in range(len(pa) - 2, -1, -1):
                st[k] = st[k + 1] * dims[k + 1]
            # base table axes arrive in canonical parent order already
            masked = _masked_table(base_tables[name], dims)
            self.parents.append(pa_arr)
            self.strides.append(st)
            self.tables.append(masked)

        off = np.zeros(self.n_endo + 1, dtype=np.int64)
        toff = np.zeros(self.n_endo + 1, dtype=np.int64)
        for e in range(self.n_endo):
            off[e + 1] = off[e] + len(self.parents[e])
            toff[e + 1] = toff[e] + self.tables[e].size
        self.packed = Packed(
            n_exo=self.n_exo,
            n_endo=self.n_endo,
            parents_flat=(np.concatenate(self.parents) if self.n_endo and off[-1]
                          else np.zeros(0, dtype=np.int64)),
            parents_off=off,
            strides_flat=(np.concatenate(self.strides) if self.n_endo and off[-1]
                          else np.zeros(0, dtype=np.int64)),
            tables_flat=(np.concatenate([t.ravel() for t in self.tables])
                         if self.n_endo else np.zeros(0, dtype=np.int16)),
            tables_off=toff,
        )
        self._closure_fn, self._local_fn = kernels.BACKENDS[self.backend]
        # plain-python mirrors for scalar lookups in search inner loops
        self._py_parents = [tuple(int(p) for p in pa) for pa in self.parents]
        self._py_strides = [tuple(int(s) for s in st) for st in self.strides]
        self._py_tables = [t.ravel() for t in self.tables]

    # -- rows -----------------------------------------------------------------

    def empty_row(self) -> np.ndarray:
        return np.full(self.n_vars, -1, dtype=np.int16)

    def encode(self, name: str, value) -> int:
        i = self.index[name]
        try:
            return self.val_index[i][value]
        except KeyError:
            raise BindingError(f"value {value!r} not in range of {name!r}") from None

    def decode(self, idx: int, code: int):
        return self.values[idx][code]

    def row(self, bindings, base: Optional[np.ndarray] = None) -> np.ndarray:
        out = self.empty_row() if base is None else base.copy()
        for name, value in bindings.items():
            if name not in self.index:
                raise BindingError(f"unknown variable {name!r}")
            out[self.index[name]] = self.encode(name, value)
        return out

    def grid_rows(self, var_idxs, base: np.ndarray) -> np.ndarray:
        """All completions of `base` over the given variables, lexicographic
        in canonical variable order (first variable slowest)."""
        dims = [int(self.sizes[i]) for i in var_idxs]
        total = int(np.prod(dims)) if dims else 1
        rows = np.tile(base, (total, 1))
        if dims:
            grid = np.indices(dims).reshape(len(dims), total)
            for k, i in enumerate(var_idxs):
                rows[:, i] = grid[k]
        return rows

    # -- kernel dispatch --------------------------------------------------------

    def closure_rows(self, rows: np.ndarray) -> np.ndarray:
        """Greedy forced-value propagation in topological order; returns a
        copy of `rows` with every determined endogenous value filled in."""
        return self._closure_fn(rows, self.packed)

    def local_rows(self, rows: np.ndarray) -> np.ndarray:
        """Per-variable forced values given exactly the pinned coordinates of
        each row (no accumulation); shape (B, n_endo), -1 = undetermined."""
        return self._local_fn(rows, self.packed)

    def closure_row(self, row: np.ndarray) -> np.ndarray:
        return self.closure_rows(row.reshape(1, -1))[0]

    def forced(self, e: int, row) -> int:
        """Scalar masked lookup for endogenous slot `e` (0-based within the
        endogenous block) against pinned coordinates in `row`."""
        idx = 0
        for p, s in zip(self._py_parents[e], self._py_strides[e]):
            idx += s * (int(row[p]) + 1)
        return int(self._py_tables[e][idx])

    # -- model-level helpers ------------------------------------------------------

    def endo_slot(self, name: str) -> int:
        return self.index[name] - self.n_exo

    def assignment(self, row: np.ndarray, var_idxs=None) -> PartialAssignment:
        """Decode bound coordinates of a row back to a PartialAssignment."""
        if var_idxs is None:
            var_idxs = [i for i in range(self.n_vars) if row[i] >= 0]
        return PartialAssignment(
            (self.names[i], self.decode(i, int(row[i]))) for i in var_idxs)

    def solve(self, context: Context, interventions: PartialAssignment) -> PartialAssignment:
        row = self.empty_row()
        for name, value in context.items():
            row[self.index[name]] = self.encode(name, value)
        sig = self.model.signature
        for name, value in interventions.items():
            if not sig.is_endogenous(name):
                raise BindingError(f"cannot intervene on {name!r}")
            row[self.index[name]] = self.encode(name, value)
        out = self.closure_row(row)
        endo = range(self.n_exo, self.n_vars)
        assert all(out[i] >= 0 for i in endo), "total context must force a solution"
        return self.assignment(out, endo)


def _masked_table(base: np.ndarray, dims: list[int]) -> np.ndarray:
    """Extend a value-index table over parent grids with "unconstrained"
    slots: entry is the unique value over the covered block, or -1."""
    masked = np.full(tuple(dims), -1, dtype=np.int16)
    if masked.size == 0:
        return masked
    masked[tuple(slice(1, None) for _ in dims)] = base
    for axis in range(len(dims)):
        sub = masked[tuple(slice(1, None) if a == axis else slice(None)
                           for a in range(len(dims)))]
        first = sub.take(0, axis=axis)
        same = (sub == np.expand_dims(first, axis)).all(axis=axis) & (first >= 0)
        dest = tuple(0 if a == axis else slice(None) for a in range(len(dims)))
        masked[dest] = np.where(same, first, -1)
    return masked


# ---------------------------------------------------------------------------
# Analysis (validation + tabulation), cached per model
# ---------------------------------------------------------------------------

@dataclass
class Analysis:
    report: ValidationReport
    _tabulated: Optional[Tabulated]

    @property
    def tabulated(self) -> Tabulated:
        if self._tabulated is None:
            raise InvalidModelError(self.report)
        return self._tabulated


_cache: "weakref.WeakKeyDictionary[Model, Analysis]" = weakref.WeakKeyDictionary()


def analysis(model: Model, backend: Optional[str] = None) -> Analysis:
    if backend is None:
        cached = _cache.get(model)
        if cached is not None:
            return cached
    result = _analyze(model, backend)
    if backend is None:
        _cache[model] = result
    return result


def _analyze(model: Model, backend: Optional[str]) -> Analysis:
    sig = model.signature
    report = ValidationReport(ok=True)
    if not sig.endogenous:
        report.ok = False
        report.problems.append("no endogenous variables")
        return Analysis(report, None)

    decl_order = {n: i for i, n in enumerate(sig.variables)}
    budget = max_evals()
    semantic_parents: dict[str, tuple[str, ...]] = {}
    tables_decl: dict[str, np.ndarray] = {}

    for var in sig.endogenous:
        eq = model.equations[var]
        args = sorted(eq.variables(), key=decl_order.__getitem__)
        dims = [len(sig.range[a]) for a in args]
        total = 1
        for d in dims:
            total *= d
        if total > budget:
            raise GuardExceeded(
                f"totality check of {var!r} needs {total} evaluations "
                f"(> {budget}); raise CAUSALQ_MAX_EVALS to allow")
        env = {}
        if args:
            grid = np.indices(dims).reshape(len(dims), total)
        for k, a in enumerate(args):
            vals = sig.range[a]
            if all(isinstance(v, (int, np.integer)) for v in vals):
                lut = np.array(vals, dtype=np.int64)
            else:
                lut = np.array(vals, dtype=object)
            env[a] = lut[grid[k]]
        shape = (total,)
        try:
            out = eq.eval_grid(env, shape)
        except EvaluationError as exc:
            report.ok = False
            mask = getattr(exc, "bad_mask", None)
            inputs = {}
            if mask is not None and args:
                flat = int(np.argwhere(mask.ravel())[0][0])
                inputs = {a: sig.range[a][int(grid[k][flat])]
                          for k, a in enumerate(args)}
            report.range_violations.append(
                RangeViolation(var, inputs, None, str(exc)))
            continue
        if np.isscalar(out) or getattr(out, "ndim", 1) == 0:
            out = np.full(shape, out)
        vmap = {v: i for i, v in enumerate(sig.range[var])}
        codes = np.array([vmap.get(v, -1) for v in out.tolist()], dtype=np.int16)
        bad = np.nonzero(codes < 0)[0]
        if bad.size:
            report.ok = False
            for flat in bad[:10]:
                inputs = {a: sig.range[a][int(grid[k][flat])]
                          for k, a in enumerate(args)} if args else {}
                report.range_violations.append(
                    RangeViolation(var, inputs, out.tolist()[int(flat)]))
            if bad.size > 10:
                report.problems.append(
                    f"{var}: {bad.size} out-of-range outputs in total")
            continue
        table = codes.reshape(dims) if args else codes.reshape(())
        # semantic parents: axes the output actually varies along
        keep = []
        for k in range(len(args)):
            ref = table.take([0], axis=k)
            if not (table == ref).all():
                keep.append(k)
            else:
                table = table.take([0], axis=k) if False else table
        # drop constant axes (safe: output identical along them)
        if len(keep) != len(args):
            idx = tuple(slice(None) if k in keep else 0 for k in range(len(args)))
            table = table[idx]
        semantic_parents[var] = tuple(args[k] for k in keep)
        tables_decl[var] = table

    if not report.ok:
        return Analysis(report, None)

    # cycle check / topological order on semantic dependence among endogenous
    endo = list(sig.endogenous)
    endo_set = set(endo)
    deps = {v: [p for p in semantic_parents[v] if p in endo_set] for v in endo}
    indeg = {v: len(deps[v]) for v in endo}
    children = {v: [] for v in endo}
    for v in endo:
        for p in deps[v]:
            children[p].append(v)
    order = []
    ready = [v for v in endo if indeg[v] == 0]
    while ready:
        ready.sort(key=decl_order.__getitem__)
        v = ready.pop(0)
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) < len(endo):
        remaining = [v for v in endo if v not in set(order)]
        cycle = _find_cycle(remaining, deps)
        report.ok = False
        report.cycle = tuple(cycle)
        return Analysis(report, None)
    report.topo_order = tuple(order)

    # reorder each table's axes to canonical (exo-declared + endo-topo) order
    canon = {n: i for i, n in enumerate(tuple(sig.exogenous) + tuple(order))}
    tables_canon = {}
    for var in endo:
        pa = semantic_parents[var]
        perm = sorted(range(len(pa)), key=lambda k: canon[pa[k]])
        tables_canon[var] = np.ascontiguousarray(
            np.transpose(tables_decl[var], perm)) if pa else tables_decl[var]
    tab = Tabulated(model, tuple(order), semantic_parents, tables_canon, backend)
    return Analysis(report, tab)


def _find_cycle(nodes, deps):
    node_set = set(nodes)
    seen = {}
    for start in nodes:
        path, on_path = [], {}
        v = start
        while True:
            if v in on_path:
                i = on_path[v]
                return path[i:]
            if v in seen:
                break
            on_path[v] = len(path)
            path.append(v)
            seen[v] = True
            nxt = [p for p in deps[v] if p in node_set]
            if not nxt:
                break
            v = nxt[0]
    return nodes  # fallback; should not happen


def tabulated(model: Model, backend: Optional[str] = None) -> Tabulated:
    """The tabulated engine for a valid model (raises InvalidModelError)."""
    return analysis(model, backend).tabulated
