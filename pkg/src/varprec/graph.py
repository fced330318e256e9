"""Recorded expression graphs.

An algorithm is recorded once as a DAG of basic arithmetic operations
(inputs at level 0, each operation one node), then executed any number of
times under different precision plans.  Execution produces values through
the exact-then-round scalar arithmetic and, alongside, propagates
relative-error variances through the stochastic error model, so every run
yields both numbers and their predicted error statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .ebfp import EbfpNumber, EbfpParams, DEFAULT_PARAMS, Flag, arith, decode, round_to_precision
from .errormodel import (
    RelErrorStats,
    RoundingModel,
    DEFAULT_ROUNDING,
    input_error_variance,
    propagate_full_precision,
    rounding_variance,
)


class OpKind(str, Enum):
    INPUT = "input"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    SQRT = "sqrt"


ARITY = {OpKind.INPUT: 0, OpKind.SQRT: 1, OpKind.ADD: 2, OpKind.SUB: 2,
         OpKind.MUL: 2, OpKind.DIV: 2}


class GraphExecutionError(RuntimeError):
    """Execution failure localized to one node."""

    def __init__(self, node_id: int, reason: str):
        super().__init__(f"node {node_id}: {reason}")
        self.node_id = node_id
        self.reason = reason


@dataclass(frozen=True)
class ExprNode:
    id: int
    op: OpKind
    operands: Tuple[int, ...]
    step: Tuple[int, int]
    part: Optional[str] = None


class ExprGraph:
    """Append-only recorder of a straight-line computation."""

    def __init__(self):
        self.nodes: List[ExprNode] = []
        self._level_width: Dict[int, int] = {}
        self._explicit_outputs: List[int] = []

    def record(self, op, operands: Sequence[int] = (), part: str = None) -> int:
        """Append a node; returns its id.  Operand ids must already exist."""
        op = OpKind(op)
        operands = tuple(operands)
        if len(operands) != ARITY[op]:
            raise ValueError(f"{op.value} takes {ARITY[op]} operands, got {len(operands)}")
        for o in operands:
            if not 0 <= o < len(self.nodes):
                raise ValueError(f"unknown operand id {o}")
        n = 0 if op is OpKind.INPUT else 1 + max(self.nodes[o].step[0] for o in operands)
        k = self._level_width.get(n, 0) + 1
        self._level_width[n] = k
        node = ExprNode(len(self.nodes), op, operands, (n, k), part)
        self.nodes.append(node)
        return node.id

    def add_input(self, part: str = None) -> int:
        return self.record(OpKind.INPUT, (), part)

    def mark_output(self, node_id: int) -> None:
        self._explicit_outputs.append(node_id)

    @property
    def inputs(self) -> List[int]:
        return [n.id for n in self.nodes if n.op is OpKind.INPUT]

    @property
    def outputs(self) -> List[int]:
        if self._explicit_outputs:
            return list(self._explicit_outputs)
        used = {o for n in self.nodes for o in n.operands}
        return [n.id for n in self.nodes if n.op is not OpKind.INPUT and n.id not in used]

    def consumers(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for o in n.operands:
                out[o].append(n.id)
        return out

    def non_input_ids(self) -> List[int]:
        return [n.id for n in self.nodes if n.op is not OpKind.INPUT]

    def __len__(self):
        return len(self.nodes)

    def dump_jsonl(self, fh, plan: Mapping[int, int] = None) -> None:
        """One node per line; precision included when a plan is given."""
        assignment = getattr(plan, "assignment", plan) or {}
        for n in self.nodes:
            rec = {"id": n.id, "op": n.op.value, "operands": list(n.operands),
                   "step": list(n.step)}
            if n.part is not None:
                rec["part"] = n.part
            if n.id in assignment:
                rec["precision"] = assignment[n.id]
            fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load_jsonl(cls, fh) -> "ExprGraph":
        g = cls()
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            got = g.record(rec["op"], rec["operands"], rec.get("part"))
            if got != rec["id"]:
                raise ValueError("node ids must be dense and in topological order")
        return g


@dataclass
class TopoStats:
    op_counts: Dict[OpKind, int]
    depth: int
    level_widths: Dict[int, int]

    @property
    def total_arith(self) -> int:
        return sum(c for op, c in self.op_counts.items() if op is not OpKind.INPUT)


def topo_stats(graph: ExprGraph) -> TopoStats:
    counts: Dict[OpKind, int] = {}
    widths: Dict[int, int] = {}
    depth = 0
    for n in graph.nodes:
        counts[n.op] = counts.get(n.op, 0) + 1
        widths[n.step[0]] = max(widths.get(n.step[0], 0), n.step[1])
        depth = max(depth, n.step[0])
    return TopoStats(counts, depth, widths)


@dataclass
class ExecutionResult:
    values: Dict[int, EbfpNumber]
    errors: Dict[int, RelErrorStats]
    output_ids: List[int]
    #: nodes whose value is exactly zero, where the relative-error frame is
    #: degenerate (variance recorded as 0; the exact zero value contributes
    #: nothing to any downstream variance)
    degenerate_zero: List[int] = field(default_factory=list)

    def output_values(self) -> List[EbfpNumber]:
        return [self.values[i] for i in self.output_ids]

    def output_fractions(self) -> List[Fraction]:
        return [decode(self.values[i]) for i in self.output_ids]


def _as_float(n: EbfpNumber) -> float:
    if n.flags is Flag.ZERO:
        return 0.0
    f = decode(n)
    return f.numerator / f.denominator if abs(f.numerator) < 2 ** 60 and f.denominator < 2 ** 60 else float(f)


def input_precision_of(input_precision, node_id: int) -> int:
    """Per-input storage precision: a single int or a mapping by node id."""
    if isinstance(input_precision, int):
        return input_precision
    return input_precision[node_id]


def execute(graph: ExprGraph, plan, input_values: Mapping[int, Fraction],
            input_precision=53, params: EbfpParams = DEFAULT_PARAMS,
            model: RoundingModel = DEFAULT_ROUNDING) -> ExecutionResult:
    """Run the graph under a precision plan.

    Input values are stored at ``input_precision`` bits (an int, or a
    mapping from input id to bits) and given the corresponding pure-storage
    error variance; every interior node is computed by exact-then-round
    arithmetic at its planned precision, and its error variance follows the
    two-stage model.  Singular relative-error frames and saturation are
    reported with the offending node id.
    """
    assignment = getattr(plan, "assignment", plan)
    values: Dict[int, EbfpNumber] = {}
    errors: Dict[int, RelErrorStats] = {}
    degenerate: List[int] = []
    for node in graph.nodes:
        if node.op is OpKind.INPUT:
            x_in = input_precision_of(input_precision, node.id)
            v = Fraction(input_values[node.id])
            values[node.id] = round_to_precision(v, x_in, params)
            errors[node.id] = RelErrorStats(0.0, input_error_variance(x_in, model))
            continue
        try:
            x = assignment[node.id]
        except KeyError:
            raise GraphExecutionError(node.id, "plan does not cover this node")
        a = values[node.operands[0]]
        b = values[node.operands[1]] if len(node.operands) > 1 else None
        try:
            out = arith(node.op.value, a, b, x)
        except ZeroDivisionError:
            raise GraphExecutionError(node.id, "division by zero")
        except ValueError as e:
            raise GraphExecutionError(node.id, str(e))
        if out.is_saturated:
            raise GraphExecutionError(node.id, out.flags.value)
        values[node.id] = out
        if out.flags is Flag.ZERO:
            # exact zero result: the relative-error frame is singular, but
            # the value itself is exact and inert downstream
            degenerate.append(node.id)
            errors[node.id] = RelErrorStats(0.0, 0.0)
            continue
        fa = _as_float(a)
        fb = _as_float(b) if b is not None else None
        sa2 = errors[node.operands[0]].variance
        sb2 = errors[node.operands[1]].variance if len(node.operands) > 1 else None
        if node.op in (OpKind.ADD, OpKind.SUB):
            # same formula as propagate_full_precision, but with the exact
            # computed result as the denominator so float-level operand
            # collisions cannot fake a singular frame
            fc = _as_float(out)
            sc2 = (fa * fa * sa2 + fb * fb * sb2) / (fc * fc)
        else:
            sc2 = propagate_full_precision(node.op.value, fa, fb, sa2, sb2)
        errors[node.id] = RelErrorStats(0.0, rounding_variance(sc2, x, model))
    return ExecutionResult(values, errors, graph.outputs, degenerate)
