"""Finite-domain structural causal models.

A model is a signature (exogenous/endogenous variables with finite ordered
ranges) plus one total equation per endogenous variable.  Equations are small
expression trees evaluated pointwise; the engine tabulates them, so any total
function into the declared range is fair game.

Values are plain ints or quoted symbols (str).  Boolean operators are strict:
their operands must be 0 or 1.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .errors import (
    BindingError,
    EvaluationError,
    InvalidModelError,
    ModelError,
)

Value = Union[int, str]


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

class Expr:
    """Base class for equation/formula expressions."""

    def variables(self) -> frozenset[str]:
        raise NotImplementedError

    def eval(self, env: Mapping[str, Value]) -> Value:
        raise NotImplementedError

    def eval_grid(self, env: Mapping[str, np.ndarray], shape) -> np.ndarray:
        """Vectorized evaluation over parallel value arrays."""
        raise NotImplementedError


def _require_bool(a, what: str):
    if isinstance(a, np.ndarray):
        if a.dtype == object:
            bad = ~np.isin(a, (0, 1))
        else:
            bad = (a != 0) & (a != 1)
        if bad.any():
            err = EvaluationError(f"{what} must be 0 or 1")
            err.bad_mask = bad
            raise err
        return a.astype(np.int64) if a.dtype == object else a
    if a not in (0, 1):
        raise EvaluationError(f"{what} must be 0 or 1, got {a!r}")
    return a


def _require_int(a, what: str):
    if isinstance(a, np.ndarray):
        if a.dtype == object:
            bad = np.array([not isinstance(x, (int, np.integer)) for x in a.ravel()])
            if bad.any():
                err = EvaluationError(f"{what} must be an integer")
                err.bad_mask = bad.reshape(a.shape)
                raise err
            return a.astype(np.int64)
        return a
    if not isinstance(a, (int, np.integer)) or isinstance(a, bool):
        raise EvaluationError(f"{what} must be an integer, got {a!r}")
    return a


@dataclass(frozen=True)
class Lit(Expr):
    value: Value

    def variables(self):
        return frozenset()

    def eval(self, env):
        return self.value

    def eval_grid(self, env, shape):
        if isinstance(self.value, str):
            out = np.empty(shape, dtype=object)
            out[...] = self.value
            return out
        return np.full(shape, self.value, dtype=np.int64)


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def variables(self):
        return frozenset((self.name,))

    def eval(self, env):
        return env[self.name]

    def eval_grid(self, env, shape):
        return env[self.name]


@dataclass(frozen=True)
class Not(Expr):
    operand: Expr

    def variables(self):
        return self.operand.variables()

    def eval(self, env):
        return 1 - _require_bool(self.operand.eval(env), "operand of !")

    def eval_grid(self, env, shape):
        return 1 - _require_bool(self.operand.eval_grid(env, shape), "operand of !")


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr

    def variables(self):
        return self.operand.variables()

    def eval(self, env):
        return -_require_int(self.operand.eval(env), "operand of unary -")

    def eval_grid(self, env, shape):
        return -_require_int(self.operand.eval_grid(env, shape), "operand of unary -")


_ARITH = {"+": lambda a, b: a + b, "-": lambda a, b: a - b, "*": lambda a, b: a * b}
_ORDER = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b}


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # one of + - * & | = != < <=
    left: Expr
    right: Expr

    def variables(self):
        return self.left.variables() | self.right.variables()

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        op = self.op
        if op in _ARITH:
            return _ARITH[op](_require_int(a, f"operand of {op}"),
                              _require_int(b, f"operand of {op}"))
        if op == "&":
            return _require_bool(a, "operand of &") & _require_bool(b, "operand of &")
        if op == "|":
            return _require_bool(a, "operand of |") | _require_bool(b, "operand of |")
        if op == "=":
            return int(a == b)
        if op == "!=":
            return int(a != b)
        if op in _ORDER:
            return int(_ORDER[op](_require_int(a, f"operand of {op}"),
                                   _require_int(b, f"operand of {op}")))
        raise AssertionError(f"unknown operator {op!r}")

    def eval_grid(self, env, shape):
        a = self.left.eval_grid(env, shape)
        b = self.right.eval_grid(env, shape)
        op = self.op
        if op in _ARITH:
            return _ARITH[op](_require_int(a, f"operand of {op}"),
                              _require_int(b, f"operand of {op}"))
        if op == "&":
            return _require_bool(a, "operand of &") & _require_bool(b, "operand of &")
        if op == "|":
            return _require_bool(a, "operand of |") | _require_bool(b, "operand of |")
        if op == "=":
            return (a == b).astype(np.int64)
        if op == "!=":
            return (a != b).astype(np.int64)
        if op in _ORDER:
            return _ORDER[op](_require_int(a, f"operand of {op}"),
                              _require_int(b, f"operand of {op}")).astype(np.int64)
        raise AssertionError(f"unknown operator {op!r}")


@dataclass(frozen=True)
class Ite(Expr):
    cond: Expr
    then: Expr
    other: Expr

    def variables(self):
        return self.cond.variables() | self.then.variables() | self.other.variables()

    def eval(self, env):
        c = _require_bool(self.cond.eval(env), "condition of ite")
        return self.then.eval(env) if c == 1 else self.other.eval(env)

    def eval_grid(self, env, shape):
        c = _require_bool(self.cond.eval_grid(env, shape), "condition of ite")
        t = self.then.eval_grid(env, shape)
        e = self.other.eval_grid(env, shape)
        if t.dtype == object or e.dtype == object:
            out = np.where(c == 1, t.astype(object), e.astype(object))
            return out
        return np.where(c == 1, t, e)


# ---------------------------------------------------------------------------
# Signature and assignments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    """Variable declarations: who is exogenous/endogenous, and their ranges."""

    exogenous: tuple[str, ...]
    endogenous: tuple[str, ...]
    range: Mapping[str, tuple[Value, ...]]

    def __post_init__(self):
        object.__setattr__(self, "exogenous", tuple(self.exogenous))
        object.__setattr__(self, "endogenous", tuple(self.endogenous))
        object.__setattr__(self, "range", dict(self.range))
        seen = set()
        for name in self.exogenous + self.endogenous:
            if name in seen:
                raise ModelError(f"variable {name!r} declared twice")
            seen.add(name)
        for name in seen:
            if name not in self.range:
                raise ModelError(f"variable {name!r} has no declared range")
        for name, values in self.range.items():
            if name not in seen:
                raise ModelError(f"range declared for unknown variable {name!r}")
            values = tuple(values)
            if not values:
                raise ModelError(f"range of {name!r} is empty")
            if len(set(values)) != len(values):
                raise ModelError(f"range of {name!r} contains duplicate values")
            self.range[name] = values

    @property
    def variables(self) -> tuple[str, ...]:
        return self.exogenous + self.endogenous

    def is_exogenous(self, name: str) -> bool:
        return name in set(self.exogenous)

    def is_endogenous(self, name: str) -> bool:
        return name in set(self.endogenous)

    def check_value(self, name: str, value: Value) -> Value:
        if name not in self.range:
            raise BindingError(f"unknown variable {name!r}")
        if value not in self.range[name]:
            raise BindingError(f"value {value!r} not in range of {name!r}")
        return value


class PartialAssignment(Mapping):
    """An ordered map from variables to values; the currency for
    interventions, antecedents, witnesses and solutions."""

    __slots__ = ("_items",)

    def __init__(self, bindings: Union[Mapping, Iterable[tuple[str, Value]], None] = None):
        items: dict[str, Value] = {}
        if bindings:
            pairs = bindings.items() if isinstance(bindings, Mapping) else bindings
            for name, value in pairs:
                if name in items:
                    raise BindingError(f"variable {name!r} bound twice")
                items[name] = value
        self._items = items

    def __getitem__(self, key):
        return self._items[key]

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self._items.items())
        return f"PartialAssignment({inner})"

    def __eq__(self, other):
        if isinstance(other, PartialAssignment):
            return self._items == other._items
        if isinstance(other, Mapping):
            return self._items == dict(other)
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._items.items()))

    @property
    def vars(self) -> tuple[str, ...]:
        return tuple(self._items)

    def restrict(self, names: Iterable[str]) -> "PartialAssignment":
        keep = set(names)
        return PartialAssignment((k, v) for k, v in self._items.items() if k in keep)

    def merge(self, other: Mapping) -> "PartialAssignment":
        """Union of two assignments; conflicting values raise BindingError."""
        out = dict(self._items)
        for k, v in other.items():
            if k in out and out[k] != v:
                raise BindingError(f"conflicting values for {k!r}: {out[k]!r} vs {v!r}")
            out[k] = v
        return PartialAssignment(out)

    def subset_of(self, other: Mapping) -> bool:
        return all(k in other and other[k] == v for k, v in self._items.items())

    def check_in(self, signature: Signature) -> "PartialAssignment":
        for name, value in self._items.items():
            signature.check_value(name, value)
        return self


def as_assignment(bindings) -> PartialAssignment:
    if isinstance(bindings, PartialAssignment):
        return bindings
    return PartialAssignment(bindings)


class Context(PartialAssignment):
    """A total assignment to the exogenous variables."""

    def __init__(self, signature: Signature, bindings):
        super().__init__(bindings)
        for name in self._items:
            if not signature.is_exogenous(name):
                raise BindingError(f"{name!r} is not exogenous")
            signature.check_value(name, self._items[name])
        missing = [u for u in signature.exogenous if u not in self._items]
        if missing:
            raise BindingError(f"context missing exogenous variables: {', '.join(missing)}")


# ---------------------------------------------------------------------------
# Causal formulas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Formula:
    """An intervention prefix plus a boolean body over endogenous atoms."""

    interventions: PartialAssignment
    body: Expr

    def check_in(self, signature: Signature) -> "Formula":
        for name, value in self.interventions.items():
            if not signature.is_endogenous(name):
                raise BindingError(f"cannot intervene on non-endogenous {name!r}")
            signature.check_value(name, value)
        _check_formula_body(self.body, signature)
        return self


def _check_formula_body(node: Expr, signature: Signature):
    if isinstance(node, Bin) and node.op in ("&", "|"):
        _check_formula_body(node.left, signature)
        _check_formula_body(node.right, signature)
        return
    if isinstance(node, Not):
        _check_formula_body(node.operand, signature)
        return
    if isinstance(node, Bin) and node.op == "=" and isinstance(node.left, Var) \
            and isinstance(node.right, Lit):
        name = node.left.name
        if not signature.is_endogenous(name):
            raise BindingError(f"formula atom on non-endogenous {name!r}")
        signature.check_value(name, node.right.value)
        return
    raise BindingError("formula body must be a boolean combination of atoms X = value")


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Model:
    """Immutable causal model: signature plus one equation per endogenous
    variable.  Validation (totality/acyclicity) is separate; see validate()."""

    signature: Signature
    equations: Mapping[str, Expr]
    name: str = "M"

    def __post_init__(self):
        object.__setattr__(self, "equations", dict(self.equations))
        endo = set(self.signature.endogenous)
        for var in self.equations:
            if var not in endo:
                raise ModelError(f"equation given for non-endogenous {var!r}")
        for var in self.signature.endogenous:
            if var not in self.equations:
                raise ModelError(f"endogenous {var!r} has no equation")
        declared = set(self.signature.variables)
        for var, eq in self.equations.items():
            refs = eq.variables()
            unknown = refs - declared
            if unknown:
                raise ModelError(
                    f"equation of {var!r} references unknown variable "
                    f"{sorted(unknown)[0]!r}")
            if var in refs:
                raise ModelError(f"equation of {var!r} references itself")

    # -- validation ---------------------------------------------------------

    def validate(self) -> "ValidationReport":
        from . import engine
        return engine.analysis(self).report

    def require_valid(self):
        report = self.validate()
        if not report.ok:
            raise InvalidModelError(report)
        return self


@dataclass
class RangeViolation:
    variable: str
    inputs: dict[str, Value]
    output: Optional[Value]
    message: str = ""

    def describe(self) -> str:
        ins = ", ".join(f"{k}={v!r}" for k, v in self.inputs.items())
        if self.message:
            return f"{self.variable}({ins}): {self.message}"
        return f"{self.variable}({ins}) = {self.output!r} outside declared range"


@dataclass
class ValidationReport:
    ok: bool
    problems: list[str] = field(default_factory=list)
    range_violations: list[RangeViolation] = field(default_factory=list)
    cycle: Optional[tuple[str, ...]] = None
    topo_order: Optional[tuple[str, ...]] = None

    def __bool__(self):
        return self.ok

    def summary(self) -> str:
        parts = list(self.problems)
        parts.extend(v.describe() for v in self.range_violations[:5])
        if len(self.range_violations) > 5:
            parts.append(f"... {len(self.range_violations) - 5} more range violations")
        if self.cycle:
            parts.append("dependence cycle: " + " -> ".join(self.cycle + (self.cycle[0],)))
        if self.ok:
            parts.append("valid; order " + ", ".join(self.topo_order or ()))
        return "; ".join(parts)


def validate(model: Model) -> ValidationReport:
    return model.validate()


# ---------------------------------------------------------------------------
# Semantics: solve / intervene / satisfies
# ---------------------------------------------------------------------------

def intervene(model: Model, setting) -> Model:
    """Replace the equations of the intervened variables by constants."""
    setting = as_assignment(setting)
    if not setting:
        return model
    sig = model.signature
    for name, value in setting.items():
        if sig.is_exogenous(name):
            raise BindingError(
                f"cannot intervene on exogenous {name!r}; set it via the context")
        if not sig.is_endogenous(name):
            raise BindingError(f"unknown variable {name!r}")
        sig.check_value(name, value)
    equations = dict(model.equations)
    for name, value in setting.items():
        equations[name] = Lit(value)
    return Model(signature=sig, equations=equations, name=model.name)


def solve(model: Model, context, interventions=None) -> PartialAssignment:
    """The unique simultaneous solution of a (possibly intervened) model."""
    from . import engine
    model.require_valid()
    if not isinstance(context, Context):
        context = Context(model.signature, context)
    tab = engine.analysis(model).tabulated
    return tab.solve(context, as_assignment(interventions or {}))


def satisfies(model: Model, context, formula: Formula) -> bool:
    """Truth of a causal formula [Ybar <- ybar] phi at (model, context)."""
    formula.check_in(model.signature)
    solution = solve(model, context, formula.interventions)
    env = dict(solution)
    if not isinstance(context, Context):
        context = Context(model.signature, context)
    env.update(context)
    return formula.body.eval(env) == 1
