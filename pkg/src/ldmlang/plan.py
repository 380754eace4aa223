"""Bind data to a model graph and lower it to an executable log-density plan.

Two lowering modes produce mathematically identical densities over the same
latent vector:

  * FUSED      - each statement evaluates vectorized over its whole governed
                 domain through precomputed flat-index arrays; recurrences and
                 DBN slices become gathers against shifted positions (all
                 values are known when conditioning, so the time loop
                 disappears from density evaluation); deterministic statements
                 are inlined into their consumers.
  * UNROLLED   - one scalar site per concrete instance, evaluated in ancestral
                 order; deterministic instances stay as named intermediates.

The latent vector layout is shared by both modes: transformed parameters in
statement topological order, then one slot per missing (imputed) cell in
(variable, index-tuple) lexicographic order.
"""

from __future__ import annotations

import itertools
import math
import operator
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from .datatable import DataTable, make_table
from .errors import (
    BindError, GraphError, IndexStructureMismatchError,
    MissingDiscreteUnsupportedError, NonFiniteDensityError,
    UndefinedReferenceError,
)
from .frontend.nodes import (
    ArrayLookup, AssignStmt, BinOp, Call, Const, IndexVar, IntLiteral, Lag,
    ProgramAst, Ref, SampleStmt, VarRef,
)
from .frontend.parser import parse_program
from .frontend.validate import validate
from .graph import (
    DBN_BLOCK, GENERAL, IID_BLOCK, RECURRENCE, GraphNode, ModelGraph,
    StructureEntry, assign_domains, build_graph, detect_structure,
    instance_name, resolve_indices, topo_order,
)

FUSED = "FUSED"
UNROLLED = "UNROLLED"

LATENT_PARAM = "LATENT_PARAM"
OBSERVED = "OBSERVED"
MISSING_IMPUTED = "MISSING_IMPUTED"
DETERMINISTIC = "DETERMINISTIC"


# --- variable layouts ---------------------------------------------------------------


@dataclass(slots=True)
class VarLayout:
    var: str
    axes: tuple
    axis_values: tuple          # per axis: tuple of admissible concrete values
    strides: tuple
    size: int
    ord_maps: tuple             # per axis: value -> ordinal

    @classmethod
    def build(cls, var, axes, graph, ranges) -> "VarLayout":
        values = []
        for p, axis in enumerate(axes):
            if axis is not None:
                lo, hi = ranges[axis]
                values.append(tuple(range(lo, hi + 1)))
            else:
                vals = sorted({sel[1] for node in graph.by_var[var]
                               for sel in [node.selector[p]] if sel[0] == "fixed"})
                values.append(tuple(vals))
        strides = [1] * len(values)
        for p in range(len(values) - 2, -1, -1):
            strides[p] = strides[p + 1] * len(values[p + 1])
        size = 1
        for v in values:
            size *= len(v)
        ord_maps = tuple({v: i for i, v in enumerate(vals)} for vals in values)
        return cls(var=var, axes=tuple(axes), axis_values=tuple(values),
                   strides=tuple(strides), size=size, ord_maps=ord_maps)

    def flat(self, key: tuple[int, ...]) -> int:
        f = 0
        for p, k in enumerate(key):
            f += self.ord_maps[p][int(k)] * self.strides[p]
        return f

    def keys(self):
        return list(itertools.product(*self.axis_values))


# --- bindings -------------------------------------------------------------------------


@dataclass(frozen=True)
class SiteBinding:
    variable: str
    key: tuple
    name: str
    status: str
    value: float = math.nan
    dist: str | None = None


@dataclass(slots=True)
class _Input:
    name: str
    arity: int
    axes: tuple
    scalar: float | None = None
    array: np.ndarray | None = None      # flat over the input's own grid
    layout: VarLayout | None = None

    @property
    def resolved(self) -> bool:
        return self.scalar is not None or self.array is not None


@dataclass(slots=True)
class BoundModel:
    graph: ModelGraph
    ranges: dict
    layouts: dict
    bindings: list
    status: dict                 # (var, key) -> (status, value)
    inputs: dict                 # name -> _Input
    obs_vars: tuple
    node_of: dict                # (var, key) -> governing GraphNode


def _input_axes(graph: ModelGraph):
    """Unify each input's axis names from its uses (refs and lookups)."""
    from .frontend.nodes import stmt_exprs, walk_exprs, walk_index_terms
    axes: dict[str, list] = {}

    def note(name, terms):
        slot = axes.setdefault(name, [None] * len(terms))
        for p, term in enumerate(terms):
            if isinstance(term, (IndexVar, Lag)) and slot[p] is None:
                slot[p] = term.name

    for stmt in graph.ast.statements:
        for expr in stmt_exprs(stmt):
            for sub in walk_exprs(expr):
                if isinstance(sub, Ref) and sub.ref.name in graph.inputs:
                    note(sub.ref.name, sub.ref.indices)
        for ref in [stmt.lhs] + [s.ref for e in stmt_exprs(stmt)
                                 for s in walk_exprs(e) if isinstance(s, Ref)]:
            for term in ref.indices:
                for t in _lookup_terms(term):
                    note(t.input_name, (t.inner,))
    return {name: tuple(a) for name, a in axes.items()}


def _lookup_terms(term):
    if isinstance(term, ArrayLookup):
        yield term
        yield from _lookup_terms(term.inner)


def _axis_extent(ranges, axis):
    lo, hi = ranges[axis]
    return hi - lo + 1


def bind(graph: ModelGraph, ranges: dict, obs_vars, tables=(),
         inputs: dict | None = None) -> BoundModel:
    """Attach observations and inputs to the graph's concrete instances."""
    obs_vars = tuple(obs_vars)
    layouts = {v: VarLayout.build(v, graph.var_axes[v], graph, ranges)
               for v in graph.var_axes}
    node_of: dict[tuple, GraphNode] = {}
    for var, nodes in graph.by_var.items():
        for node in nodes:
            for key in node.domain:
                node_of[(var, key)] = node

    # resolve inputs: explicit dict first, then any table carrying the column
    from .frontend.nodes import stmt_exprs, walk_exprs
    input_axes = _input_axes(graph)
    lookup_inputs = set()
    for stmt in graph.ast.statements:
        refs = [stmt.lhs] + [s.ref for e in stmt_exprs(stmt)
                             for s in walk_exprs(e) if isinstance(s, Ref)]
        for ref in refs:
            for term in ref.indices:
                for t in _lookup_terms(term):
                    lookup_inputs.add(t.input_name)

    resolved_inputs: dict[str, _Input] = {}
    for name in graph.inputs:
        axes = input_axes.get(name, ())
        inp = _Input(name=name, arity=len(axes), axes=axes)
        supplied = (inputs or {}).get(name)
        if supplied is not None:
            if np.ndim(supplied) == 0:
                inp.scalar = float(supplied)
            else:
                inp.array = np.asarray(supplied, dtype=float).ravel()
        else:
            for table in tables:
                if name in table.columns:
                    _fill_input_from_table(inp, table, ranges, graph)
                    break
        if inp.array is not None and inp.axes:
            if any(a is None for a in inp.axes):
                # indexed by raw value: ordinal = value
                inp.layout = None
            else:
                vals = tuple(tuple(range(*_incl(ranges[a]))) for a in inp.axes)
                sizes = [len(v) for v in vals]
                want = int(np.prod(sizes))
                if inp.array.size != want:
                    raise BindError(
                        f"input {name!r} needs {want} values "
                        f"(grid over {inp.axes}), got {inp.array.size}")
                strides = [1] * len(vals)
                for p in range(len(vals) - 2, -1, -1):
                    strides[p] = strides[p + 1] * sizes[p + 1]
                inp.layout = VarLayout(
                    var=name, axes=inp.axes, axis_values=vals,
                    strides=tuple(strides), size=want,
                    ord_maps=tuple({v: i for i, v in enumerate(vv)} for vv in vals))
        if inp.resolved and name in lookup_inputs and inp.array is not None:
            if not np.all(inp.array == np.round(inp.array)):
                raise BindError(f"input {name!r} is used as a lookup table "
                                "and must contain integers")
        resolved_inputs[name] = inp

    # observation tables: each obs var in exactly one table, matching structure
    status: dict[tuple, tuple] = {}
    for var in obs_vars:
        if var not in graph.var_axes:
            raise BindError(f"cannot observe {var!r}: not a model variable")
        if any(n.kind == "deterministic" for n in graph.by_var[var]):
            raise BindError(f"cannot condition on {var!r}: it is deterministic")
        holders = [t for t in tables if var in t.columns]
        if not holders:
            raise BindError(f"no supplied table has a column for observed "
                            f"variable {var!r}")
        if len(holders) > 1:
            raise BindError(f"observed variable {var!r} appears in more than "
                            "one table")
        table = holders[0]
        axes = graph.var_axes[var]
        if any(a is None for a in axes):
            raise IndexStructureMismatchError(
                f"observed variable {var!r} has fixed-only index positions")
        if set(table.index_names) != set(axes):
            raise IndexStructureMismatchError(
                f"table for {var!r} is indexed by {tuple(table.index_names)}, "
                f"variable by {tuple(axes)}")
        perm = [axes.index(n) for n in table.index_names]
        layout = layouts[var]
        for key in layout.keys():
            node = node_of.get((var, key))
            if node is None:
                continue
            tkey = tuple(int(key[p]) for p in perm)
            value = table.get(var, tkey)
            if math.isnan(value):
                spec = dist.lookup(node.stmt.dist.name)
                if spec.is_discrete:
                    raise MissingDiscreteUnsupportedError(
                        f"{instance_name(var, key)} is missing but "
                        f"{spec.name} has discrete support; discrete cells "
                        "cannot be imputed")
                status[(var, key)] = (MISSING_IMPUTED, math.nan)
            else:
                status[(var, key)] = (OBSERVED, value)

    bindings: list[SiteBinding] = []
    order = topo_order(graph)
    for node in order:
        for key in node.domain:
            var = node.variable
            name = instance_name(var, key)
            if node.kind == "deterministic":
                bindings.append(SiteBinding(var, key, name, DETERMINISTIC))
                status.setdefault((var, key), (DETERMINISTIC, math.nan))
                continue
            dname = node.stmt.dist.name
            st = status.get((var, key))
            if st is None:
                status[(var, key)] = (LATENT_PARAM, math.nan)
                bindings.append(SiteBinding(var, key, name, LATENT_PARAM,
                                            dist=dname))
            else:
                bindings.append(SiteBinding(var, key, name, st[0], st[1],
                                            dist=dname))
    return BoundModel(graph=graph, ranges=ranges, layouts=layouts,
                      bindings=bindings, status=status, inputs=resolved_inputs,
                      obs_vars=obs_vars, node_of=node_of)


def _incl(bounds):
    lo, hi = bounds
    return lo, hi + 1


def _fill_input_from_table(inp: _Input, table: DataTable, ranges, graph) -> None:
    if not inp.axes:
        col = table.columns[inp.name]
        finite = col[~np.isnan(col)]
        if finite.size != 1:
            raise BindError(f"scalar input {inp.name!r} needs exactly one "
                            f"value, table has {finite.size}")
        inp.scalar = float(finite[0])
        return
    if any(a is None for a in inp.axes):
        raise BindError(f"input {inp.name!r} has an underdetermined index "
                        "structure; pass it programmatically")
    if set(table.index_names) != set(inp.axes):
        raise IndexStructureMismatchError(
            f"table for input {inp.name!r} is indexed by "
            f"{tuple(table.index_names)}, the input by {tuple(inp.axes)}")
    perm = [inp.axes.index(n) for n in table.index_names]
    grids = [range(*_incl(ranges[a])) for a in inp.axes]
    out = np.empty(int(np.prod([len(g) for g in grids])))
    for i, key in enumerate(itertools.product(*grids)):
        tkey = tuple(int(key[p]) for p in perm)
        v = table.get(inp.name, tkey)
        if math.isnan(v):
            raise BindError(f"input {inp.name!r} is missing a value at "
                            f"{instance_name(inp.name, key)}")
        out[i] = v
    inp.array = out


# --- latent layout ----------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    name: str
    variable: str
    key: tuple
    kind: str                    # LATENT_PARAM | MISSING_IMPUTED
    transform: object
    offset: int
    dist: str


def build_layout(bound: BoundModel):
    """Latent slots: parameters in topo order, then imputations lexicographic."""
    slots: list[Slot] = []
    simulate_only = False
    order = topo_order(bound.graph)
    for node in order:
        if node.kind != "stochastic":
            continue
        spec = dist.lookup(node.stmt.dist.name)
        for key in node.domain:
            st, _ = bound.status[(node.variable, key)]
            if st != LATENT_PARAM:
                continue
            if spec.is_discrete:
                simulate_only = True
                continue
            slots.append(Slot(
                name=instance_name(node.variable, key), variable=node.variable,
                key=key, kind=LATENT_PARAM,
                transform=dist.transform_for(spec.support),
                offset=len(slots), dist=spec.name))
    imputed = sorted(
        ((var, key) for (var, key), (st, _) in bound.status.items()
         if st == MISSING_IMPUTED),
        key=lambda vk: (vk[0], vk[1]))
    for var, key in imputed:
        node = bound.node_of[(var, key)]
        spec = dist.lookup(node.stmt.dist.name)
        slots.append(Slot(
            name=instance_name(var, key), variable=var, key=key,
            kind=MISSING_IMPUTED, transform=dist.transform_for(spec.support),
            offset=len(slots), dist=spec.name))
    return slots, simulate_only


# --- block metadata ------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarSite:
    name: str
    variable: str
    key: tuple
    status: str
    dist: str | None


@dataclass(frozen=True)
class IIDBlock:
    variable: str
    extent: int
    dist: str
    n_observed: int
    n_imputed: int
    n_latent: int


@dataclass(frozen=True)
class ScanBlock:
    index: str
    steps: int
    members: tuple               # per-step site variables, within-slice order
    carry: dict                  # member -> lag window size
    replication_axes: tuple
    replication_extent: int
    n_observed: int
    n_imputed: int


# --- expression compilation -----------------------------------------------------------


class _UnresolvedInput(Exception):
    def __init__(self, name):
        self.name = name


class _Demote(Exception):
    """Vector compilation hit a case that needs per-instance lowering."""


_BINOPS = {"+": operator.add, "-": operator.sub,
           "*": operator.mul, "/": operator.truediv}

_CALLS = {"exp": ad.exp, "log": ad.log, "expit": ad.expit, "logit": ad.logit,
          "sqrt": ad.sqrt, "abs": ad.absolute}


class _Ctx:
    __slots__ = ("bound", "graph", "layouts", "inputs", "node_of", "mode")

    def __init__(self, bound: BoundModel, mode: str):
        self.bound = bound
        self.graph = bound.graph
        self.layouts = bound.layouts
        self.inputs = bound.inputs
        self.node_of = bound.node_of
        self.mode = mode


def _term_value(ctx: _Ctx, term, km):
    """Concrete index value(s) of one index term under the key map."""
    if isinstance(term, IndexVar):
        return km[term.name]
    if isinstance(term, Lag):
        return km[term.name] - term.offset
    if isinstance(term, IntLiteral):
        return term.value
    if isinstance(term, ArrayLookup):
        inp = ctx.inputs[term.input_name]
        if not inp.resolved:
            raise _UnresolvedInput(term.input_name)
        inner = _term_value(ctx, term.inner, km)
        pos = _input_positions(ctx, inp, (inner,))
        vals = inp.array[pos]
        out = np.asarray(np.round(vals), dtype=np.int64)
        return out if isinstance(pos, np.ndarray) else int(out)
    raise TypeError(term)


def _input_positions(ctx: _Ctx, inp: _Input, idx_values):
    pos = 0
    vector = any(isinstance(v, np.ndarray) for v in idx_values)
    for p, v in enumerate(idx_values):
        if inp.layout is not None:
            lo = inp.layout.axis_values[p][0]
            extent = len(inp.layout.axis_values[p])
            stride = inp.layout.strides[p]
            o = np.asarray(v) - lo if vector else int(v) - lo
        else:
            extent = inp.array.size
            stride = 1
            o = np.asarray(v) if vector else int(v)
        if np.any(np.asarray(o) < 0) or np.any(np.asarray(o) >= extent):
            raise UndefinedReferenceError(
                f"index into input {inp.name!r} falls outside its range")
        pos = pos + o * stride
    return pos


def _flat_positions(ctx: _Ctx, var: str, terms, km):
    """Flat grid position(s) of a variable reference; compile-time constant."""
    layout = ctx.layouts[var]
    pos = 0
    vector = False
    for p, term in enumerate(terms):
        v = _term_value(ctx, term, km)
        if isinstance(v, np.ndarray):
            vector = True
            vals = np.asarray(v)
            om = layout.ord_maps[p]
            base = layout.axis_values[p][0]
            contiguous = layout.axis_values[p] == tuple(
                range(base, base + len(layout.axis_values[p])))
            if contiguous:
                o = vals - base
            else:
                o = np.array([om.get(int(x), -1) for x in vals])
            if np.any(o < 0) or np.any(o >= len(layout.axis_values[p])):
                raise UndefinedReferenceError(
                    f"reference to {var!r} falls outside the declared range")
            pos = pos + o * layout.strides[p]
        else:
            om = layout.ord_maps[p]
            if int(v) not in om:
                raise UndefinedReferenceError(
                    f"{instance_name(var, (int(v),))} lies outside the "
                    "declared range" if len(terms) == 1 else
                    f"reference to {var!r} at index {int(v)} lies outside "
                    "the declared range")
            pos = pos + om[int(v)] * layout.strides[p]
    if vector and not isinstance(pos, np.ndarray):
        pos = np.full(1, pos)
    return pos


def _compile_expr(ctx: _Ctx, expr, km, fused: bool):
    """Compile an expression to a closure over the runtime environment.

    km maps axis names to concrete index values: ints for scalar sites,
    int arrays for vectorized statements (FUSED only).
    """
    if isinstance(expr, Const):
        v = expr.value
        return lambda env: v
    if isinstance(expr, BinOp):
        lf = _compile_expr(ctx, expr.left, km, fused)
        rf = _compile_expr(ctx, expr.right, km, fused)
        op = _BINOPS[expr.op]
        return lambda env: op(lf(env), rf(env))
    if isinstance(expr, Call):
        if expr.fn == "pow":
            bf = _compile_expr(ctx, expr.args[0], km, fused)
            ef = _compile_expr(ctx, expr.args[1], km, fused)
            return lambda env: bf(env) ** ef(env)
        fn = _CALLS[expr.fn]
        af = _compile_expr(ctx, expr.args[0], km, fused)
        return lambda env: fn(af(env))
    if isinstance(expr, Ref):
        return _compile_ref(ctx, expr.ref, km, fused)
    raise TypeError(expr)


def _raiser(name):
    def fail(env):
        raise UndefinedReferenceError(
            f"input {name!r} has no value; supply a data table containing it "
            "or pass inputs={...}")
    return fail


def _compile_ref(ctx: _Ctx, ref: VarRef, km, fused: bool):
    name = ref.name
    if name in ctx.inputs:
        inp = ctx.inputs[name]
        if not inp.resolved:
            return _raiser(name)
        if not ref.indices:
            v = inp.scalar
            return lambda env: v
        idx_values = [_term_value(ctx, t, km) for t in ref.indices]
        pos = _input_positions(ctx, inp, idx_values)
        vals = inp.array[pos]
        if isinstance(vals, np.ndarray):
            vals = vals.copy()
        else:
            vals = float(vals)
        return lambda env: vals

    # model variable
    if not fused:
        if not ref.indices:
            return lambda env: env.values[(name, 0)]
        pos = _flat_positions(ctx, name, ref.indices, km)
        key = (name, int(pos))
        def read(env):
            try:
                return env.values[key]
            except KeyError:
                raise UndefinedReferenceError(
                    f"value of {key[0]!r} required before it is defined "
                    "(reference escapes ancestral order)") from None
        return read

    # FUSED: deterministic refs inline, stochastic refs read value arrays
    any_det = any(n.kind == "deterministic" for n in ctx.graph.by_var[name])
    if not ref.indices:
        if any_det:
            node = ctx.node_of[(name, ())]
            return _compile_expr(ctx, node.stmt.rhs, {}, fused=True)
        return lambda env: env.arrays[name]
    if any_det:
        return _inline_deterministic(ctx, ref, km)
    pos = _flat_positions(ctx, name, ref.indices, km)
    if isinstance(pos, np.ndarray):
        return lambda env: ad.gather(env.arrays[name], pos)
    p = int(pos)
    return lambda env: ad.index(env.arrays[name], p)


def _inline_deterministic(ctx: _Ctx, ref: VarRef, km):
    """Replace a reference to a deterministic variable by its definition."""
    var = ref.name
    idx_values = [_term_value(ctx, t, km) for t in ref.indices]
    vector = any(isinstance(v, np.ndarray) for v in idx_values)
    if not vector:
        key = tuple(int(v) for v in idx_values)
        node = ctx.node_of.get((var, key))
        if node is None:
            raise UndefinedReferenceError(
                f"{instance_name(var, key)} is not governed by any statement")
        if node.kind != "deterministic":
            # mixed stochastic/deterministic variable: read the array
            pos = ctx.layouts[var].flat(key)
            return lambda env: ad.index(env.arrays[var], pos)
        sub_km = _binding_for(node, key)
        return _compile_expr(ctx, node.stmt.rhs, sub_km, fused=True)
    # vectorized consumer: all referenced instances must share one governor
    n = max(np.asarray(v).size for v in idx_values if isinstance(v, np.ndarray))
    cols = [np.broadcast_to(np.asarray(v), (n,)) for v in idx_values]
    keys = [tuple(int(c[i]) for c in cols) for i in range(n)]
    governors = {id(ctx.node_of.get((var, k))) for k in keys}
    if len(governors) != 1:
        raise _Demote()
    node = ctx.node_of[(var, keys[0])]
    if node.kind != "deterministic":
        pos = _flat_positions(ctx, var, ref.indices, km)
        return lambda env: ad.gather(env.arrays[var], pos)
    sub_km = {}
    for p, (kind, axis) in enumerate(node.selector):
        if kind == "sym":
            sub_km[axis] = cols[p]
    return _compile_expr(ctx, node.stmt.rhs, sub_km, fused=True)


def _binding_for(node: GraphNode, key: tuple):
    km = {}
    for (kind, axis), k in zip(node.selector, key):
        if kind == "sym":
            km[axis] = int(k)
    return km


# --- runtime environment ---------------------------------------------------------------


class _Env:
    __slots__ = ("u", "arrays", "values", "jacobian")

    def __init__(self, u):
        self.u = u
        self.arrays = {}
        self.values = {}
        self.jacobian = 0.0


# --- lowering ---------------------------------------------------------------------------


def _scan_entries(report):
    return {e.index: e for e in report.entries.values()
            if e.kind in (RECURRENCE, DBN_BLOCK)}


def _scan_entry_for(graph: ModelGraph, node: GraphNode, scans: dict):
    if not node.selector or node.selector[-1][0] != "sym":
        return None
    axis = node.selector[-1][1]
    entry = scans.get(axis)
    if entry is not None and node.variable in entry.members:
        return entry
    return None


def site_schedule(graph: ModelGraph, report) -> list:
    """Ancestral (node, key) order: scan members interleave slice by slice.

    A scan group is emitted at its LAST member's topological position; every
    prerequisite of every member (base cases included) precedes that point.
    """
    scans = _scan_entries(report)
    order = topo_order(graph)
    out = []
    last_member = {}
    for node in order:
        entry = _scan_entry_for(graph, node, scans)
        if entry is not None:
            last_member[entry.index] = node
    for node in order:
        entry = _scan_entry_for(graph, node, scans)
        if entry is None:
            out.extend((node, key) for key in node.domain)
            continue
        if last_member[entry.index] is not node:
            continue
        members = [n for n in order
                   if _scan_entry_for(graph, n, scans) is entry]
        rank = {id(m): i for i, m in enumerate(members)}
        by_time: dict[int, list] = {}
        for m in members:
            for key in m.domain:
                by_time.setdefault(key[-1], []).append((m, key))
        for t in sorted(by_time):
            # preserve within-slice member order
            slots = by_time[t]
            slots.sort(key=lambda nk: (rank[id(nk[0])], nk[1]))
            out.extend(slots)
    return out


def _latent_groups(slots, layouts):
    """Group latent slots per variable and transform kind for assembly."""
    groups: dict[str, dict[str, tuple[list, list]]] = {}
    for slot in slots:
        g = groups.setdefault(slot.variable, {})
        offs, poss = g.setdefault(slot.transform.name, ([], []))
        offs.append(slot.offset)
        poss.append(layouts[slot.variable].flat(slot.key))
    return groups


def _build_assembly(bound: BoundModel, slots):
    """FUSED: closure filling env.arrays for every stochastic variable and
    accumulating the transform log-Jacobian into env.jacobian."""
    graph = bound.graph
    groups = _latent_groups(slots, bound.layouts)
    transforms = {"identity": dist.IdentityTransform(),
                  "exp": dist.ExpTransform(),
                  "logistic": dist.LogisticTransform()}

    scalar_parts = []   # (var, offset, transform) or (var, None, const value)
    vector_parts = []   # (var, base array, [(offsets, positions, transform)])
    for var, axes in graph.var_axes.items():
        if all(n.kind == "deterministic" for n in graph.by_var[var]):
            continue
        layout = bound.layouts[var]
        if not axes:
            st, val = bound.status.get((var, ()), (None, math.nan))
            if st == OBSERVED:
                scalar_parts.append((var, None, float(val)))
            else:
                g = groups.get(var)
                if not g:
                    continue   # discrete latent in a simulate-only plan
                kind, (offs, _) = next(iter(g.items()))
                scalar_parts.append((var, offs[0], transforms[kind]))
            continue
        base = np.zeros(layout.size)
        for key in layout.keys():
            st, val = bound.status.get((var, key), (None, math.nan))
            if st == OBSERVED:
                base[layout.flat(key)] = val
        puts = []
        for kind, (offs, poss) in groups.get(var, {}).items():
            puts.append((np.asarray(offs, dtype=np.int64),
                         np.asarray(poss, dtype=np.int64), transforms[kind]))
        vector_parts.append((var, base, puts))

    def assemble(env):
        jac = 0.0
        for var, off, tr in scalar_parts:
            if off is None:
                env.arrays[var] = tr    # tr holds the observed constant
                continue
            ui = ad.index(env.u, off)
            env.arrays[var] = tr.constrain(ui)
            if not isinstance(tr, dist.IdentityTransform):
                jac = jac + tr.log_jacobian(ui)
        for var, base, puts in vector_parts:
            arr = base
            for offs, poss, tr in puts:
                seg = ad.gather(env.u, offs)
                vals = tr.constrain(seg)
                arr = ad.put(arr, poss, vals)
                if not isinstance(tr, dist.IdentityTransform):
                    jac = jac + ad.tsum(tr.log_jacobian(seg))
            env.arrays[var] = arr
        env.jacobian = jac

    return assemble


def _vector_km(node: GraphNode, domain):
    km = {}
    cols = list(zip(*domain)) if domain else []
    for p, (kind, axis) in enumerate(node.selector):
        if kind == "sym":
            km[axis] = np.asarray(cols[p], dtype=np.int64)
    return km


def _statement_term(ctx: _Ctx, node: GraphNode, domain, obs_only=None):
    """Vectorized log-density term of one stochastic statement over `domain`.

    obs_only: optional bool mask aligned with domain restricting the sum
    (used for the observed-data log likelihood)."""
    if obs_only is not None:
        domain = [k for k, keep in zip(domain, obs_only) if keep]
    if not domain:
        return lambda env: 0.0
    km = _vector_km(node, domain)
    spec = dist.lookup(node.stmt.dist.name)
    params = [_compile_expr(ctx, p, km, fused=True)
              for p in node.stmt.dist.params]
    layout = ctx.layouts[node.variable]
    pos = np.asarray([layout.flat(k) for k in domain], dtype=np.int64)
    logp = spec.logp

    def term(env):
        vals = ad.gather(env.arrays[node.variable], pos)
        return ad.tsum(logp(vals, *(p(env) for p in params)))
    return term


def _scalar_term(ctx: _Ctx, node: GraphNode, key):
    """Scalar log-density term of one instance (FUSED parameter/GENERAL site)."""
    km = _binding_for(node, key)
    spec = dist.lookup(node.stmt.dist.name)
    params = [_compile_expr(ctx, p, km, fused=True)
              for p in node.stmt.dist.params]
    logp = spec.logp
    var = node.variable
    if ctx.graph.var_axes[var]:
        pos = ctx.layouts[var].flat(key)
        def term(env):
            v = ad.index(env.arrays[var], pos)
            return logp(v, *(p(env) for p in params))
    else:
        def term(env):
            return logp(env.arrays[var], *(p(env) for p in params))
    return term


def _counts(bound: BoundModel, node: GraphNode, domain=None):
    n_obs = n_imp = n_lat = 0
    for key in (domain if domain is not None else node.domain):
        st, _ = bound.status[(node.variable, key)]
        if st == OBSERVED:
            n_obs += 1
        elif st == MISSING_IMPUTED:
            n_imp += 1
        elif st == LATENT_PARAM:
            n_lat += 1
    return n_obs, n_imp, n_lat


def _lower_fused(bound: BoundModel, slots, report):
    ctx = _Ctx(bound, FUSED)
    graph = bound.graph
    scans = _scan_entries(report)
    order = topo_order(graph)
    blocks, terms, obs_terms = [], [], []
    last_member = {}
    for node in order:
        entry = _scan_entry_for(graph, node, scans)
        if entry is not None:
            last_member[entry.index] = node

    def emit_scalar_sites(node, with_blocks=True):
        for key in node.domain:
            st, _ = bound.status[(node.variable, key)]
            if with_blocks:
                blocks.append(ScalarSite(instance_name(node.variable, key),
                                         node.variable, key, st,
                                         node.stmt.dist.name))
            try:
                t = _scalar_term(ctx, node, key)
            except _UnresolvedInput as e:
                t = _raiser(e.name)
            terms.append(t)
            if st == OBSERVED:
                obs_terms.append(t)

    for node in order:
        if not node.domain:
            continue
        if node.kind == "deterministic":
            continue   # inlined into consumers
        entry = _scan_entry_for(graph, node, scans)
        if entry is not None:
            if last_member[entry.index] is not node:
                continue
            members = [n for n in order
                       if _scan_entry_for(graph, n, scans) is entry]
            times = sorted({k[-1] for m in members for k in m.domain})
            rep_extent = 1
            for a in entry.replication_axes:
                rep_extent *= _axis_extent(bound.ranges, a)
            n_obs = n_imp = 0
            for m in members:
                o, i, _ = _counts(bound, m)
                n_obs += o
                n_imp += i
            carry = {}
            for m in members:
                for e in m.deps:
                    if e.target in entry.members:
                        lag = e.lag_by_axis.get(entry.index, 0)
                        if lag > 0:
                            carry[e.target] = max(carry.get(e.target, 0), lag)
            blocks.append(ScanBlock(
                index=entry.index, steps=len(times),
                members=tuple(m.variable for m in members), carry=carry,
                replication_axes=entry.replication_axes,
                replication_extent=rep_extent,
                n_observed=n_obs, n_imputed=n_imp))
            for m in members:
                try:
                    term = _statement_term(ctx, m, m.domain)
                except _UnresolvedInput as e:
                    terms.append(_raiser(e.name))
                    continue
                except _Demote:
                    emit_scalar_sites(m, with_blocks=False)
                    continue
                terms.append(term)
                obs_mask = [bound.status[(m.variable, k)][0] == OBSERVED
                            for k in m.domain]
                if any(obs_mask):
                    obs_terms.append(_statement_term(ctx, m, m.domain, obs_mask))
            continue
        if not node.is_indexed or node.n_symbolic == 0:
            emit_scalar_sites(node)
            continue
        # symbolic statement outside any scan: IID if vectorizable, else unroll
        axis = node.selector[-1][1] if node.selector[-1][0] == "sym" else None
        entry_kind = report.entries.get(axis).kind if axis in report.entries else None
        general = (entry_kind == GENERAL) or any(e.has_lookup for e in node.deps)
        if not general:
            try:
                term = _statement_term(ctx, node, node.domain)
            except (_Demote, _UnresolvedInput):
                general = True
        if general:
            emit_scalar_sites(node)
            continue
        n_obs, n_imp, n_lat = _counts(bound, node)
        blocks.append(IIDBlock(variable=node.variable, extent=len(node.domain),
                               dist=node.stmt.dist.name, n_observed=n_obs,
                               n_imputed=n_imp, n_latent=n_lat))
        terms.append(term)
        obs_mask = [bound.status[(node.variable, k)][0] == OBSERVED
                    for k in node.domain]
        if any(obs_mask):
            obs_terms.append(_statement_term(ctx, node, node.domain, obs_mask))

    assemble = _build_assembly(bound, slots)
    return blocks, terms, obs_terms, assemble


def _lower_unrolled(bound: BoundModel, slots, report):
    ctx = _Ctx(bound, UNROLLED)
    schedule = site_schedule(bound.graph, report)
    slot_of = {(s.variable, s.key): s for s in slots}
    blocks, steps, obs_flags = [], [], []

    for node, key in schedule:
        var = node.variable
        flat = bound.layouts[var].flat(key)
        st, obs_val = bound.status[(var, key)]
        name = instance_name(var, key)
        if node.kind == "deterministic":
            try:
                expr = _compile_expr(ctx, node.stmt.rhs,
                                     _binding_for(node, key), fused=False)
            except _UnresolvedInput as e:
                expr = _raiser(e.name)
            def step(env, expr=expr, k=(var, flat)):
                env.values[k] = expr(env)
                return 0.0
            blocks.append(ScalarSite(name, var, key, DETERMINISTIC, None))
            steps.append(step)
            obs_flags.append(False)
            continue
        spec = dist.lookup(node.stmt.dist.name)
        try:
            params = [_compile_expr(ctx, p, _binding_for(node, key),
                                    fused=False)
                      for p in node.stmt.dist.params]
            bad = None
        except _UnresolvedInput as e:
            bad = _raiser(e.name)
        logp = spec.logp
        if st == OBSERVED:
            v = float(obs_val)
            if bad is not None:
                step = bad
            else:
                def step(env, v=v, params=params, logp=logp, k=(var, flat)):
                    env.values[k] = v
                    return logp(v, *(p(env) for p in params))
        elif st == LATENT_PARAM and spec.is_discrete:
            step = _raiser(name)   # simulate-only plan; never evaluated
        else:
            slot = slot_of[(var, key)]
            tr = slot.transform
            off = slot.offset
            identity = isinstance(tr, dist.IdentityTransform)
            if bad is not None:
                step = bad
            else:
                def step(env, off=off, tr=tr, identity=identity,
                         params=params, logp=logp, k=(var, flat)):
                    ui = ad.index(env.u, off)
                    v = tr.constrain(ui)
                    env.values[k] = v
                    lp = logp(v, *(p(env) for p in params))
                    if not identity:
                        lp = lp + tr.log_jacobian(ui)
                    return lp
        blocks.append(ScalarSite(name, var, key, st, node.stmt.dist.name))
        steps.append(step)
        obs_flags.append(st == OBSERVED)

    return blocks, steps, obs_flags


# --- the executable plan ---------------------------------------------------------------


class ExecutablePlan:
    """Compiled log-density program over an unconstrained latent vector."""

    def __init__(self, bound: BoundModel, slots, simulate_only, mode,
                 blocks, report):
        self.bound = bound
        self.graph = bound.graph
        self.ranges = bound.ranges
        self.slots = slots
        self.mode = mode
        self.blocks = blocks
        self.structure = report
        self.simulate_only = simulate_only
        self.bindings = bound.bindings
        self._assemble = None
        self._terms = []
        self._obs_terms = []
        self._steps = []
        self._obs_flags = []
        self._sim_program = None

    # -- layout ----------------------------------------------------------

    @property
    def latent_dim(self) -> int:
        return len(self.slots)

    @property
    def site_names(self) -> list:
        return [s.name for s in self.slots]

    @property
    def n_latent_params(self) -> int:
        return sum(1 for s in self.slots if s.kind == LATENT_PARAM)

    @property
    def n_observed(self) -> int:
        return sum(1 for b in self.bindings if b.status == OBSERVED)

    def constrain(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        for kind, offs in self._kind_offsets().items():
            tr = {"identity": dist.IdentityTransform(),
                  "exp": dist.ExpTransform(),
                  "logistic": dist.LogisticTransform()}[kind]
            out[offs] = tr.constrain(u[offs])
        return out

    def unconstrain(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        out = np.empty_like(values)
        for kind, offs in self._kind_offsets().items():
            tr = {"identity": dist.IdentityTransform(),
                  "exp": dist.ExpTransform(),
                  "logistic": dist.LogisticTransform()}[kind]
            out[offs] = tr.unconstrain(values[offs])
        return out

    def _kind_offsets(self):
        by_kind: dict[str, list] = {}
        for s in self.slots:
            by_kind.setdefault(s.transform.name, []).append(s.offset)
        return {k: np.asarray(v, dtype=np.int64) for k, v in by_kind.items()}

    # -- evaluation --------------------------------------------------------

    def eval_logdensity(self, u):
        """Core evaluation; u may be a raw vector or an autodiff Node."""
        if self.simulate_only:
            raise MissingDiscreteUnsupportedError(
                "plan has unobserved discrete sites; it can only simulate")
        env = _Env(u)
        if self.mode == FUSED:
            self._assemble(env)
            total = env.jacobian
            for t in self._terms:
                total = total + t(env)
        else:
            total = 0.0
            for s in self._steps:
                total = total + s(env)
        return total

    def logdensity(self, u) -> float:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.latent_dim,):
            raise ValueError(f"latent vector must have shape "
                             f"({self.latent_dim},), got {u.shape}")
        if np.isnan(u).any():
            raise NonFiniteDensityError("latent vector contains NaN")
        with np.errstate(all="ignore"):
            return float(self.eval_logdensity(u))

    def logdensity_and_grad(self, u):
        return ad.grad_logdensity(self, u)

    def observed_loglik(self, u) -> float:
        """Sum of log densities of OBSERVED sites at the given latent vector."""
        if self.simulate_only:
            raise MissingDiscreteUnsupportedError(
                "plan has unobserved discrete sites; it can only simulate")
        u = np.asarray(u, dtype=float)
        with np.errstate(all="ignore"):
            env = _Env(u)
            if self.mode == FUSED:
                self._assemble(env)
                total = 0.0
                for t in self._obs_terms:
                    total = total + t(env)
            else:
                total = 0.0
                for s, is_obs in zip(self._steps, self._obs_flags):
                    lp = s(env)
                    if is_obs:
                        total = total + lp
            return float(total)


def lower(bound: BoundModel, mode: str = FUSED) -> ExecutablePlan:
    report = detect_structure(bound.graph)
    slots, simulate_only = build_layout(bound)
    if mode == FUSED:
        blocks, terms, obs_terms, assemble = _lower_fused(bound, slots, report)
        plan = ExecutablePlan(bound, slots, simulate_only, FUSED, blocks, report)
        plan._assemble = assemble
        plan._terms = terms
        plan._obs_terms = obs_terms
    elif mode == UNROLLED:
        blocks, steps, obs_flags = _lower_unrolled(bound, slots, report)
        plan = ExecutablePlan(bound, slots, simulate_only, UNROLLED, blocks,
                              report)
        plan._steps = steps
        plan._obs_flags = obs_flags
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return plan


def compile_model(source, tables=(), obs=(), inputs=None,
                  mode: str = FUSED) -> ExecutablePlan:
    """Front door: parse (if needed), validate, bind, and lower a model."""
    ast = parse_program(source) if isinstance(source, str) else source
    diags = validate(ast)
    if diags:
        raise GraphError("model failed validation:\n  " +
                         "\n  ".join(str(d) for d in diags[:8]))
    graph = build_graph(ast)
    ranges = resolve_indices(ast, tables)
    assign_domains(graph, ranges)
    bound = bind(graph, ranges, obs, tables, inputs)
    return lower(bound, mode)


# --- prior simulation --------------------------------------------------------------------


def prior_simulate(plan: ExecutablePlan, rng: np.random.Generator,
                   n_draws: int) -> DataTable:
    """Ancestral sampling from the joint prior; returns one wide table with a
    `draw` column, one column per used index, and one column per variable
    (scalar variables repeat across index rows)."""
    bound = plan.bound
    graph = bound.graph
    program = _simulation_program(plan)

    env = _Env(None)
    for step in program:
        step(env, rng, n_draws)

    used = [d.name for d in graph.ast.indices
            if any(d.name in (a for a in graph.var_axes[v] if a)
                   for v in graph.var_axes)]
    out_vars = [v for v in graph.var_axes
                if not any(a is None for a in graph.var_axes[v])]
    grids = [range(*_incl(bound.ranges[a])) for a in used]
    grid_keys = list(itertools.product(*grids)) or [()]
    n_rows = n_draws * len(grid_keys)
    idx_rows = np.empty((n_rows, 1 + len(used)), dtype=np.int64)
    cols = {v: np.empty(n_rows) for v in out_vars}
    r = 0
    axis_pos = {a: i for i, a in enumerate(used)}
    proj = {v: [axis_pos[a] for a in graph.var_axes[v]] for v in out_vars}
    for d in range(n_draws):
        for gk in grid_keys:
            idx_rows[r, 0] = d
            idx_rows[r, 1:] = gk
            for v in out_vars:
                key = tuple(gk[p] for p in proj[v])
                vals = env.values[(v, bound.layouts[v].flat(key))]
                vals = np.asarray(vals)
                cols[v][r] = float(vals[d] if vals.ndim else vals)
            r += 1
    return make_table(["draw"] + used, idx_rows, cols)


def _simulation_program(plan: ExecutablePlan):
    if plan._sim_program is not None:
        return plan._sim_program
    bound = plan.bound
    ctx = _Ctx(bound, UNROLLED)
    schedule = site_schedule(bound.graph, plan.structure)
    program = []
    for node, key in schedule:
        var = node.variable
        flat = bound.layouts[var].flat(key)
        km = _binding_for(node, key)
        if node.kind == "deterministic":
            expr = _compile_expr(ctx, node.stmt.rhs, km, fused=False)
            def step(env, rng, n, expr=expr, k=(var, flat)):
                v = expr(env)
                env.values[k] = np.broadcast_to(np.asarray(v, dtype=float),
                                                (n,)).copy() \
                    if np.ndim(v) == 0 else v
                return None
            program.append(step)
            continue
        spec = dist.lookup(node.stmt.dist.name)
        params = [_compile_expr(ctx, p, km, fused=False)
                  for p in node.stmt.dist.params]
        sample = spec.sample
        def step(env, rng, n, params=params, sample=sample, k=(var, flat)):
            vals = [p(env) for p in params]
            env.values[k] = np.asarray(
                sample(rng, *vals, size=(n,)), dtype=float)
            return None
        program.append(step)
    plan._sim_program = program
    return program
