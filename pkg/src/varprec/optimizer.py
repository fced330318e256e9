"""Precision assignment: complexity model, utility, x^opt lookup table, and
the offline/online planners.

The planning currency is the sensitivity coefficient G_sigma carried by each
node: the derivative of the global utility with respect to that node's
post-rounding error variance, folded together with the rounding-law
constants.  The stationarity condition of the per-node utility reduces to a
threshold comparison of rho = -G_sigma/G_o against a geometric ladder, one
rung per integer precision, which is the lookup table.  The offline planner
walks the graph backwards multiplying expectation factors; the online
planner walks forwards during execution using the actual operand values.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .ebfp import EbfpParams, DEFAULT_PARAMS, arith, decode, round_to_precision
from .errormodel import (
    RelErrorStats,
    RoundingModel,
    DEFAULT_ROUNDING,
    W_LIMIT_VAR,
    input_error_variance,
    ops_per_bit,
    propagate_full_precision,
    rounding_variance,
    speculation_factor,
)
from .graph import ExecutionResult, ExprGraph, GraphExecutionError, OpKind, input_precision_of


DEFAULT_WEIGHTS = {OpKind.ADD: 1.0, OpKind.SUB: 1.0, OpKind.MUL: 30.0,
                   OpKind.DIV: 30.0, OpKind.SQRT: 80.0}


@dataclass(frozen=True)
class ComplexityModel:
    """Linear per-bit cost o_u(x) = w_u * x with per-op weights."""

    weights: Mapping[OpKind, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def weight(self, op) -> float:
        w = self.weights[OpKind(op)]
        if w <= 0:
            raise ValueError("complexity weights must be positive")
        return w

    def cost(self, op, x: float) -> float:
        return self.weight(op) * x


@dataclass(frozen=True)
class UtilityConfig:
    """Trade-off weight, storage base, precision bounds, output sensitivities."""

    alpha: float = 1e-9
    eps: float = 2.0
    x_min: int = 4
    x_max: int = 64
    out_weights: Optional[Mapping[int, float]] = None

    def __post_init__(self):
        if not (1 <= self.x_min <= self.x_max):
            raise ValueError("need 1 <= x_min <= x_max")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def beta(self, output_id: int) -> float:
        if self.out_weights is None:
            return 1.0
        return float(self.out_weights.get(output_id, 0.0))

    #: folded rounding-law constant appearing in every G_sigma seed
    @property
    def gsigma_unit(self) -> float:
        e = self.eps
        return 2.0 * math.log(e) * e ** -2 * W_LIMIT_VAR


@dataclass
class PrecisionPlan:
    assignment: Dict[int, int]
    provenance: str = "fixed"
    gsigma: Optional[Dict[int, float]] = None

    def validate(self, graph: ExprGraph, cfg: UtilityConfig) -> None:
        for nid in graph.non_input_ids():
            x = self.assignment.get(nid)
            if x is None:
                raise ValueError(f"plan misses node {nid}")
            if not cfg.x_min <= x <= cfg.x_max:
                raise ValueError(f"node {nid} precision {x} out of bounds")


class XoptLut:
    """Monotone map from rho = -G_sigma/G_o to the optimal integer precision.

    Thresholds are where the discrete utility's forward difference changes
    sign; they form a geometric ladder with ratio eps**2, so multiplying rho
    by eps**2 moves the answer up exactly one bit inside the open range.
    """

    def __init__(self, cm: ComplexityModel, cfg: UtilityConfig):
        self.cm = cm
        self.cfg = cfg
        e = cfg.eps
        scale = 2.0 * math.log(e) / (1.0 - e ** -2)
        self.thresholds: Dict[OpKind, List[float]] = {}
        for op in DEFAULT_WEIGHTS:
            w = cm.weight(op)
            self.thresholds[op] = [scale * w * e ** (2 * x)
                                   for x in range(cfg.x_min, cfg.x_max)]

    def lookup(self, rho: float, op) -> int:
        """Smallest x whose threshold is >= rho, clamped to the bounds."""
        t = self.thresholds[OpKind(op)]
        return self.cfg.x_min + bisect_left(t, rho)

    def reverse(self, x: int, op) -> float:
        """Representative rho for a precision: the geometric midpoint of the
        bin that maps to x (bins have ratio eps**2, so midpoint = top/eps)."""
        t = self.thresholds[OpKind(op)]
        e = self.cfg.eps
        if x >= self.cfg.x_max:
            return t[-1] * e
        return t[x - self.cfg.x_min] / e


def build_xopt_lut(cm: ComplexityModel, cfg: UtilityConfig) -> XoptLut:
    return XoptLut(cm, cfg)


def final_step_precision(graph: ExprGraph, cfg: UtilityConfig,
                         cm: ComplexityModel,
                         lut: XoptLut = None) -> Tuple[Dict[int, int], Dict[int, float]]:
    """Optimal precision and G_sigma seed for every output node."""
    lut = lut or build_xopt_lut(cm, cfg)
    xs: Dict[int, int] = {}
    gs: Dict[int, float] = {}
    for oid in graph.outputs:
        node = graph.nodes[oid]
        g = -cfg.beta(oid) * cfg.gsigma_unit
        gs[oid] = g
        xs[oid] = lut.lookup(-g / cfg.alpha, node.op)
    return xs, gs


def offline_vpc(graph: ExprGraph, cfg: UtilityConfig, cm: ComplexityModel,
                e_b: int = 10) -> PrecisionPlan:
    """Value-free precision assignment by a reverse sweep of expectation
    factors; runs entirely before any execution.

    A node shared by several consumers takes the most demanding consumer's
    sensitivity (the precision the worst path requires): on a tree this is
    the plain one-consumer recursion, and on a DAG it avoids double-counting
    reuse whose error contributions are strongly correlated downstream.
    """
    lut = build_xopt_lut(cm, cfg)
    consumers = graph.consumers()
    out_set = set(graph.outputs)
    back = {op: speculation_factor(op.value, "backward", e_b)
            for op in DEFAULT_WEIGHTS}
    gsig: Dict[int, float] = {}
    assignment: Dict[int, int] = {}
    for node in reversed(graph.nodes):
        terms = []
        if node.id in out_set:
            terms.append(-cfg.beta(node.id) * cfg.gsigma_unit)
        terms.extend(gsig[cid] * back[graph.nodes[cid].op]
                     for cid in consumers[node.id])
        g = min(terms, default=0.0)  # sensitivities are negative: min = most demanding
        gsig[node.id] = g
        if node.op is not OpKind.INPUT:
            assignment[node.id] = lut.lookup(-g / cfg.alpha, node.op)
    return PrecisionPlan(assignment, "offline", gsig)


@dataclass
class _PathInfo:
    length: int
    n_add: int
    n_sub: int
    n_sqrt: int
    anchor: int


def _paths_to_outputs(graph: ExprGraph) -> Dict[int, _PathInfo]:
    """Longest consumer path per node with add/sub/sqrt crossing counts."""
    consumers = graph.consumers()
    info: Dict[int, _PathInfo] = {}
    for node in reversed(graph.nodes):
        best: Optional[_PathInfo] = None
        if not consumers[node.id]:
            best = _PathInfo(0, 0, 0, 0, node.id)
        for cid in consumers[node.id]:
            c = graph.nodes[cid]
            up = info[cid]
            cand = _PathInfo(up.length + 1,
                             up.n_add + (c.op is OpKind.ADD),
                             up.n_sub + (c.op is OpKind.SUB),
                             up.n_sqrt + (c.op is OpKind.SQRT),
                             up.anchor)
            if best is None or cand.length > best.length:
                best = cand
        info[node.id] = best
    return info


def seed_bit_offset(n_add: int, n_sub: int, n_sqrt: int, e_b: int,
                    rounded: bool = True) -> float:
    """Precision offset between a first-step node and its anchoring output,
    from the per-op change rates (sqrt moves exactly one bit per crossing).

    The unrounded value carries the sub-bit sensitivity gradient that the
    seeding applies in G-space before quantization.
    """
    off = -n_add / ops_per_bit("add", e_b) + n_sub / ops_per_bit("sub", e_b) - n_sqrt
    return round(off) if rounded else off


def _exponent(v: float, eps: float) -> int:
    return math.floor(math.log(abs(v), eps))


def online_vpc(graph: ExprGraph, cfg: UtilityConfig, cm: ComplexityModel,
               input_values: Mapping[int, Fraction], e_b: int = 10,
               input_precision=53, params: EbfpParams = DEFAULT_PARAMS,
               model: RoundingModel = DEFAULT_ROUNDING
               ) -> Tuple[ExecutionResult, PrecisionPlan]:
    """Plan-while-executing assignment using actual operand values.

    First-step nodes (and input-fed operand routes generally) are seeded
    from the final-step precision plus a path-length bit offset; interior
    routes advance G_sigma by the forward factor of the node's own kind,
    with the add/sub factor taken from the operand exponents when they
    differ and computed exactly when they coincide.  Each node executes at
    its decided precision before any consumer is visited.
    """
    lut = build_xopt_lut(cm, cfg)
    final_x, _ = final_step_precision(graph, cfg, cm, lut)
    paths = _paths_to_outputs(graph)
    eps = cfg.eps

    def seed_x(nid: int) -> int:
        p = paths[nid]
        anchor = final_x.get(p.anchor)
        if anchor is None:  # anchor not an output (isolated chain); rare
            anchor = (cfg.x_min + cfg.x_max) // 2
        off = seed_bit_offset(p.n_add, p.n_sub, p.n_sqrt, e_b)
        return int(min(cfg.x_max, max(cfg.x_min, anchor + off)))

    def seed_g(nid: int, op) -> float:
        # anchor rho shifted by the unrounded path offset in G-space
        p = paths[nid]
        anchor = final_x.get(p.anchor)
        if anchor is None:
            anchor = (cfg.x_min + cfg.x_max) // 2
        off = seed_bit_offset(p.n_add, p.n_sub, p.n_sqrt, e_b, rounded=False)
        rho = lut.reverse(anchor, op) * float(eps) ** (2.0 * off)
        return -cfg.alpha * rho

    if input_precision is None:
        # store each input at the seed precision of its deepest consumer:
        # the storage an adaptive pipeline would have produced it at
        consumers = graph.consumers()
        input_precision = {
            nid: max((seed_x(c) for c in consumers[nid]), default=cfg.x_max)
            for nid in graph.inputs
        }

    values: Dict[int, object] = {}
    floats: Dict[int, float] = {}
    errors: Dict[int, RelErrorStats] = {}
    gsig: Dict[int, float] = {}
    assignment: Dict[int, int] = {}
    degenerate: List[int] = []

    for node in graph.nodes:
        if node.op is OpKind.INPUT:
            x_in = input_precision_of(input_precision, node.id)
            v = Fraction(input_values[node.id])
            values[node.id] = round_to_precision(v, x_in, params)
            floats[node.id] = float(v)
            errors[node.id] = RelErrorStats(0.0, input_error_variance(x_in, model))
            continue

        op = node.op
        ops_ids = node.operands
        va = floats[ops_ids[0]]
        vb = floats[ops_ids[1]] if len(ops_ids) > 1 else None

        if op is OpKind.DIV and vb == 0:
            raise GraphExecutionError(node.id, "division by zero")
        if op is OpKind.SQRT and va < 0:
            raise GraphExecutionError(node.id, "sqrt of negative value")
        if op is OpKind.ADD:
            vc = va + vb
        elif op is OpKind.SUB:
            vc = va - vb
        elif op is OpKind.MUL:
            vc = va * vb
        elif op is OpKind.DIV:
            vc = va / vb
        else:
            vc = math.sqrt(va)

        if vc == 0:
            # exact-zero result: no relative-error frame, nothing to plan;
            # compute at the floor and mark the node degenerate
            x = cfg.x_min
            g_store = 0.0
        else:
            def forward_factor(operand_value: float) -> float:
                if op in (OpKind.MUL, OpKind.DIV):
                    return 1.0
                if op is OpKind.SQRT:
                    return 4.0
                if va == 0 or vb == 0:
                    return 1.0  # adding an exact zero changes nothing
                # add/sub: operand^2/result^2, clipped at 1 so the recursion
                # stays bounded where the relative frame shrinks (the regime
                # where the cheap exponent approximation is invalid)
                return min(1.0, (operand_value / vc) ** 2)

            routes: List[Tuple[float, float]] = []  # (proposal, merge weight)
            for oid in ops_ids:
                v_op = floats[oid]
                if op in (OpKind.ADD, OpKind.SUB):
                    weight = abs(v_op)
                    if weight == 0:
                        continue
                else:
                    weight = 1.0
                if graph.nodes[oid].op is OpKind.INPUT:
                    proposal = seed_g(node.id, op)
                else:
                    proposal = gsig[oid] * forward_factor(v_op)
                routes.append((proposal, weight))

            if not routes:
                g = 0.0
            elif op in (OpKind.ADD, OpKind.SUB):
                # magnitude-weighted sum: the dominant operand's route wins
                # when the exponents differ greatly, and the attenuated
                # non-dominant proposal fades out
                wsum = sum(w for _, w in routes)
                g = sum(p * w for p, w in routes) / wsum
            else:
                g = sum(p for p, _ in routes) / len(routes)

            x = lut.lookup(-g / cfg.alpha, op)
            g_store = -cfg.alpha * lut.reverse(x, op)

        gsig[node.id] = g_store
        assignment[node.id] = x

        a = values[ops_ids[0]]
        b = values[ops_ids[1]] if len(ops_ids) > 1 else None
        try:
            out = arith(op.value, a, b, x)
        except (ZeroDivisionError, ValueError) as e:
            raise GraphExecutionError(node.id, str(e))
        if out.is_saturated:
            raise GraphExecutionError(node.id, out.flags.value)
        values[node.id] = out
        fr = decode(out)
        fc = fr.numerator / fr.denominator if abs(fr.numerator) < 2 ** 60 and fr.denominator < 2 ** 60 else float(fr)
        floats[node.id] = fc

        if fc == 0:
            degenerate.append(node.id)
            errors[node.id] = RelErrorStats(0.0, 0.0)
            continue
        sa2 = errors[ops_ids[0]].variance
        sb2 = errors[ops_ids[1]].variance if len(ops_ids) > 1 else None
        if op in (OpKind.ADD, OpKind.SUB):
            sc2 = (va * va * sa2 + vb * vb * sb2) / (fc * fc)
        else:
            sc2 = propagate_full_precision(op.value, va, vb, sa2, sb2)
        errors[node.id] = RelErrorStats(0.0, rounding_variance(sc2, x, model))

    result = ExecutionResult(values, errors, graph.outputs, degenerate)
    return result, PrecisionPlan(assignment, "online", gsig)


def fixed_plan(graph: ExprGraph, x: int) -> PrecisionPlan:
    return PrecisionPlan({nid: x for nid in graph.non_input_ids()}, "fixed")


def random_blockwise_plan(graph: ExprGraph, rng: np.random.Generator,
                          x_min: int, x_max: int) -> PrecisionPlan:
    """One uniformly drawn precision per part tag (all nodes must be tagged)."""
    parts = []
    for nid in graph.non_input_ids():
        part = graph.nodes[nid].part
        if part is None:
            raise ValueError(f"node {nid} has no part tag")
        if part not in parts:
            parts.append(part)
    draw = {p: int(rng.integers(x_min, x_max + 1)) for p in sorted(parts)}
    return PrecisionPlan({nid: draw[graph.nodes[nid].part]
                          for nid in graph.non_input_ids()}, "random-blockwise")


def plan_metrics(graph: ExprGraph, plan, cm: ComplexityModel) -> Tuple[float, float]:
    """(complexity-weighted average precision, total complexity)."""
    assignment = getattr(plan, "assignment", plan)
    total = 0.0
    wsum = 0.0
    for nid in graph.non_input_ids():
        w = cm.weight(graph.nodes[nid].op)
        total += w * assignment[nid]
        wsum += w
    return (total / wsum if wsum else 0.0), total


def modeled_utility(graph: ExprGraph, plan, cfg: UtilityConfig,
                    cm: ComplexityModel, e_b: int = 10,
                    input_precision: int = 53) -> float:
    """Expected-utility objective the offline planner optimizes: output
    error variances propagated with expectation backward factors, plus the
    weighted complexity total."""
    assignment = getattr(plan, "assignment", plan)
    back = {op: speculation_factor(op.value, "backward", e_b)
            for op in DEFAULT_WEIGHTS}
    var: Dict[int, float] = {}
    cost = 0.0
    in_var = input_error_variance(input_precision)
    for node in graph.nodes:
        if node.op is OpKind.INPUT:
            var[node.id] = in_var
            continue
        x = assignment[node.id]
        f = back[node.op]
        if node.op is OpKind.SQRT:
            sc2 = f * var[node.operands[0]]
        else:
            sc2 = f * (var[node.operands[0]] + var[node.operands[1]])
        var[node.id] = rounding_variance(sc2, x, RoundingModel(cfg.eps))
        cost += cm.cost(node.op, x)
    err = sum(cfg.beta(oid) * var[oid] for oid in graph.outputs)
    return err + cfg.alpha * cost


def modeled_utility_batch(graph: ExprGraph, plans: np.ndarray, node_order: Sequence[int],
                          cfg: UtilityConfig, cm: ComplexityModel, e_b: int = 10,
                          input_precision: int = 53) -> np.ndarray:
    """Vectorized :func:`modeled_utility` over many plans at once.

    ``plans`` has shape (n_plans, len(node_order)); column j is the
    precision of node ``node_order[j]``.
    """
    col = {nid: j for j, nid in enumerate(node_order)}
    back = {op: speculation_factor(op.value, "backward", e_b)
            for op in DEFAULT_WEIGHTS}
    eps = cfg.eps
    in_var = input_error_variance(input_precision)
    var: Dict[int, np.ndarray] = {}
    cost = np.zeros(plans.shape[0])
    for node in graph.nodes:
        if node.op is OpKind.INPUT:
            var[node.id] = np.full(plans.shape[0], in_var)
            continue
        x = plans[:, col[node.id]].astype(float)
        f = back[node.op]
        if node.op is OpKind.SQRT:
            sc2 = f * var[node.operands[0]]
        else:
            sc2 = f * (var[node.operands[0]] + var[node.operands[1]])
        r2 = float(eps) ** (-2 * (x + 1))
        var[node.id] = (1.0 + r2 * W_LIMIT_VAR) * sc2 + r2 * W_LIMIT_VAR
        cost += cm.weight(node.op) * x
    err = sum(cfg.beta(oid) * var[oid] for oid in graph.outputs)
    return err + cfg.alpha * cost


def plan_to_csv(graph: ExprGraph, plan: PrecisionPlan, fh) -> None:
    w = csv.writer(fh)
    w.writerow(["node_id", "op", "step_n", "step_k", "x", "g_sigma"])
    gs = plan.gsigma or {}
    for nid in graph.non_input_ids():
        node = graph.nodes[nid]
        w.writerow([nid, node.op.value, node.step[0], node.step[1],
                    plan.assignment[nid], repr(gs.get(nid, ""))])


def plan_from_csv(fh, provenance: str = "fixed") -> PrecisionPlan:
    rd = csv.reader(fh)
    header = next(rd)
    assignment: Dict[int, int] = {}
    gs: Dict[int, float] = {}
    for row in rd:
        nid, x = int(row[0]), int(row[4])
        assignment[nid] = x
        if row[5] not in ("", "''"):
            try:
                gs[nid] = float(row[5].strip("'"))
            except ValueError:
                pass
    return PrecisionPlan(assignment, provenance, gs or None)
