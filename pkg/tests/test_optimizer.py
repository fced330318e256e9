"""Tests for the precision-assignment machinery."""

import io
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from varprec.graph import ExprGraph, OpKind
from varprec.optimizer import (
    ComplexityModel,
    PrecisionPlan,
    UtilityConfig,
    build_xopt_lut,
    final_step_precision,
    fixed_plan,
    modeled_utility,
    modeled_utility_batch,
    offline_vpc,
    online_vpc,
    plan_from_csv,
    plan_metrics,
    plan_to_csv,
    random_blockwise_plan,
    seed_bit_offset,
)

CM = ComplexityModel()
CFG = UtilityConfig(alpha=1e-9)


def chain(*ops):
    g = ExprGraph()
    prev = g.add_input()
    aux = g.add_input()
    for op in ops:
        prev = g.record(op, [prev] if op == "sqrt" else [prev, aux])
    return g, prev


def random_tree_graph(rng, n_ops):
    """Random expression tree: interior nodes consumed at most once (inputs
    may repeat, as a reused leaf variable would)."""
    ops = ["add", "sub", "mul", "div", "sqrt"]
    g = ExprGraph()
    inputs = [g.add_input() for _ in range(int(rng.integers(2, 4)))]
    avail = list(inputs)

    def take():
        i = int(rng.integers(0, len(avail) + len(inputs)))
        if i < len(avail):
            return avail.pop(i)
        return inputs[i - len(avail)]

    for _ in range(n_ops):
        op = ops[rng.integers(0, 5)]
        node = g.record(op, [take()] if op == "sqrt" else [take(), take()])
        avail.append(node)
    return g


class TestLut:
    def test_clamps(self):
        lut = build_xopt_lut(CM, CFG)
        assert lut.lookup(0.0, "mul") == CFG.x_min
        assert lut.lookup(1e300, "mul") == CFG.x_max

    def test_monotone_and_unit_step(self):
        lut = build_xopt_lut(CM, CFG)
        for op in ("add", "mul", "sqrt"):
            rhos = np.geomspace(1e-2, 1e30, 200)
            xs = [lut.lookup(r, op) for r in rhos]
            assert all(b >= a for a, b in zip(xs, xs[1:]))
            base = lut.thresholds[OpKind(op)][12] * 0.9
            x0 = lut.lookup(base, op)
            assert lut.lookup(base * CFG.eps ** 2, op) == x0 + 1

    def test_reverse_is_consistent(self):
        lut = build_xopt_lut(CM, CFG)
        for op in ("add", "sub", "mul", "div", "sqrt"):
            for x in (CFG.x_min, 11, 37, CFG.x_max):
                assert lut.lookup(lut.reverse(x, op), op) == x

    def test_threshold_tracks_continuous_stationary_point(self):
        # scanning the discrete per-node utility confirms the tabulated
        # transition: U(x) = rho * eps^(-2x) / (2 ln eps) + w * x
        lut = build_xopt_lut(CM, CFG)
        e = CFG.eps
        for op, w in ((OpKind.ADD, 1.0), (OpKind.MUL, 30.0)):
            for xt in (9, 20):
                rho = lut.thresholds[op][xt - CFG.x_min] * 0.999
                xs = np.arange(CFG.x_min, CFG.x_max + 1)
                u = rho * e ** (-2.0 * xs) / (2 * math.log(e)) + w * xs
                assert xs[int(np.argmin(u))] == lut.lookup(rho, op) == xt


class TestFinalStep:
    def test_zero_weight_output_floors(self):
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        m1 = g.record("mul", [a, b])
        m2 = g.record("add", [a, b])
        cfg = UtilityConfig(alpha=1e-9, out_weights={m1: 1.0, m2: 0.0})
        xs, gs = final_step_precision(g, cfg, CM)
        assert xs[m2] == cfg.x_min
        assert xs[m1] > cfg.x_min
        assert gs[m1] < 0

    def test_large_alpha_floors_everything(self):
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        m = g.record("mul", [a, b])
        xs, _ = final_step_precision(g, UtilityConfig(alpha=1e6), CM)
        assert xs[m] == 4

    def test_integer_scan_picks_stationary_bit(self):
        # choose alpha so the continuous optimum sits near 12; the discrete
        # scan of the modeled utility agrees with the lookup
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        m = g.record("mul", [a, b])
        lut = build_xopt_lut(CM, CFG)
        rho12 = lut.reverse(12, "mul")
        cfg = UtilityConfig(alpha=CFG.gsigma_unit / rho12)
        xs, _ = final_step_precision(g, cfg, CM)
        assert xs[m] == 12
        best = min(range(4, 65), key=lambda x: modeled_utility(
            g, {m: x}, cfg, CM))
        assert abs(best - 12) <= 1


class TestOffline:
    def test_single_op_equals_final_step(self):
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        m = g.record("div", [a, b])
        assert offline_vpc(g, CFG, CM).assignment[m] == \
            final_step_precision(g, CFG, CM)[0][m]

    def test_sqrt_chain_steps_down(self):
        g, _ = ExprGraph(), None
        a = g.add_input()
        s1 = g.record("sqrt", [a])
        s2 = g.record("sqrt", [s1])
        s3 = g.record("sqrt", [s2])
        plan = offline_vpc(g, CFG, CM)
        xf = plan.assignment[s3]
        assert plan.assignment[s2] == xf - 1
        assert plan.assignment[s1] == xf - 2

    def test_muldiv_chain_keeps_precision(self):
        g, last = chain("mul", "div", "mul", "div")
        plan = offline_vpc(g, CFG, CM)
        xs = set(plan.assignment.values())
        assert len(xs) == 1

    def test_addsub_moves_less_than_one_bit_per_hop(self):
        g, last = chain("add", "add", "add")
        plan = offline_vpc(g, CFG, CM)
        xs = sorted(plan.assignment.values())
        assert xs[-1] - xs[0] <= 1

    def test_bounds_respected(self):
        g, _ = chain("sqrt", "sqrt", "sqrt", "sqrt", "sqrt", "sqrt")
        cfg = UtilityConfig(alpha=1e-6, x_min=4, x_max=10)
        plan = offline_vpc(g, cfg, CM)
        plan.validate(g, cfg)
        assert min(plan.assignment.values()) >= 4
        assert max(plan.assignment.values()) <= 10

    def test_shared_node_takes_most_demanding_consumer(self):
        # fan-out does not inflate a shared node's sensitivity: it plans for
        # its most demanding consumer, which for identical consumers is the
        # single-consumer value
        def build(n_consumers):
            g = ExprGraph()
            a = g.add_input()
            h = g.record("sqrt", [a])
            for _ in range(n_consumers):
                g.record("sqrt", [h])
            return g, h
        g1, h1 = build(1)
        g4, h4 = build(4)
        p1 = offline_vpc(g1, CFG, CM)
        p4 = offline_vpc(g4, CFG, CM)
        assert p4.gsigma[h4] == pytest.approx(p1.gsigma[h1])
        assert p4.assignment[h4] == p1.assignment[h1]

    def test_mixed_consumers_take_worst(self):
        # one sqrt consumer (quarter factor) and one mul consumer (unit
        # factor): the shared operand plans for the mul path
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        h = g.record("mul", [a, b])
        g.record("sqrt", [h])
        m = g.record("mul", [h, b])
        plan = offline_vpc(g, CFG, CM)
        g2 = ExprGraph()
        a2, b2 = g2.add_input(), g2.add_input()
        h2 = g2.record("mul", [a2, b2])
        m2 = g2.record("mul", [h2, b2])
        plan2 = offline_vpc(g2, CFG, CM)
        assert plan.assignment[h] == plan2.assignment[h2]

    def test_small_graph_optimality(self):
        rng = np.random.default_rng(42)
        for _ in range(12):
            g = random_tree_graph(rng, int(rng.integers(2, 7)))
            cfg = UtilityConfig(alpha=10.0 ** rng.uniform(-9, -4), x_min=4, x_max=12)
            off = offline_vpc(g, cfg, CM)
            u_off = modeled_utility(g, off, cfg, CM)
            nids = g.non_input_ids()
            grid = np.array(list(itertools.product(range(4, 13), repeat=len(nids))))
            u_best = modeled_utility_batch(g, grid, nids, cfg, CM).min()
            dq = max(abs(modeled_utility(
                g, {**off.assignment, nid: min(12, max(4, off.assignment[nid] + d))},
                cfg, CM) - u_off)
                for nid in nids for d in (-1, 1))
            assert u_off - u_best <= dq + 1e-18


class TestOnline:
    def test_matches_offline_on_operand_free_ops(self):
        g, _ = chain("mul", "div")
        g2 = ExprGraph()
        a = g2.add_input()
        s1 = g2.record("sqrt", [a])
        s2 = g2.record("sqrt", [s1])
        for gr, vals in ((g, {0: Fraction(5, 3), 1: Fraction(7, 4)}),
                         (g2, {0: Fraction(7, 3)})):
            off = offline_vpc(gr, CFG, CM)
            _, on = online_vpc(gr, CFG, CM, vals)
            assert on.assignment == off.assignment

    def test_single_op_consistency(self):
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        m = g.record("mul", [a, b])
        off = offline_vpc(g, CFG, CM)
        _, on = online_vpc(g, CFG, CM, {a: Fraction(3), b: Fraction(2)})
        assert on.assignment[m] == off.assignment[m]

    def test_forward_sqrt_one_bit_up(self):
        g = ExprGraph()
        a = g.add_input()
        s1 = g.record("sqrt", [a])
        s2 = g.record("sqrt", [s1])
        _, on = online_vpc(g, CFG, CM, {a: Fraction(2)})
        assert on.assignment[s2] == on.assignment[s1] + 1

    def test_dominant_operand_wins_merge(self):
        # addition with wildly different exponents: the merged sensitivity is
        # the dominant operand's route (within one quantization bin), not the
        # non-dominant route's amplified proposal
        g = ExprGraph()
        big, small = g.add_input(), g.add_input()
        m1 = g.record("mul", [big, big])
        m2 = g.record("mul", [small, small])
        s = g.record("add", [m1, m2])
        _, on = online_vpc(g, CFG, CM, {big: Fraction(2 ** 12), small: Fraction(1, 2 ** 12)})
        lut = build_xopt_lut(CM, CFG)
        dominant_route_x = lut.lookup(-on.gsigma[m1] / CFG.alpha, "add")
        assert abs(on.assignment[s] - dominant_route_x) <= 1

    def test_values_computed_during_planning(self):
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        m = g.record("mul", [a, b])
        res, plan = online_vpc(g, CFG, CM, {a: Fraction(3, 2), b: Fraction(5, 2)})
        assert res.output_fractions()[0] == Fraction(15, 4)
        assert res.errors[m].variance > 0

    def test_balanced_addition_raises_consumer_precision(self):
        # equal exponents take the exact-path factor (c/a)^2 = 4 for a
        # balanced sum: consumers of additions sit above their operands
        g = ExprGraph()
        xs = [g.add_input() for _ in range(2)]
        m1 = g.record("mul", [xs[0], xs[0]])
        m2 = g.record("mul", [xs[1], xs[1]])
        s = g.record("add", [m1, m2])
        d = g.record("mul", [s, s])
        _, on = online_vpc(g, CFG, CM, {xs[0]: Fraction(3, 2), xs[1]: Fraction(5, 4)})
        assert on.assignment[s] >= on.assignment[m1]


class TestPlans:
    def test_fixed(self):
        g, _ = chain("add", "mul")
        p = fixed_plan(g, 12)
        assert all(v == 12 for v in p.assignment.values())
        assert plan_metrics(g, p, CM)[0] == 12.0

    def test_blockwise_requires_tags(self):
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        g.record("add", [a, b])
        with pytest.raises(ValueError):
            random_blockwise_plan(g, np.random.default_rng(0), 4, 20)

    def test_blockwise_draw_coverage(self):
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        n1 = g.record("add", [a, b], part="p1")
        n2 = g.record("mul", [n1, a], part="p2")
        seen = set()
        rng = np.random.default_rng(3)
        for _ in range(100):
            p = random_blockwise_plan(g, rng, 4, 24)
            seen.update(p.assignment.values())
            assert set(p.assignment) == {n1, n2}
        assert min(seen) <= 6 and max(seen) >= 22

    def test_metrics_example(self):
        g = ExprGraph()
        a, b = g.add_input(), g.add_input()
        n1 = g.record("add", [a, b])
        n2 = g.record("sqrt", [n1])
        avg, total = plan_metrics(g, {n1: 10, n2: 20}, CM)
        assert avg == pytest.approx((1 * 10 + 80 * 20) / 81)
        assert total == pytest.approx(1 * 10 + 80 * 20)

    def test_csv_roundtrip(self):
        g, _ = chain("add", "mul", "sqrt")
        plan = offline_vpc(g, CFG, CM)
        buf = io.StringIO()
        plan_to_csv(g, plan, buf)
        buf.seek(0)
        back = plan_from_csv(buf, "offline")
        assert back.assignment == plan.assignment


class TestSeedOffset:
    def test_sqrt_counts_one_bit(self):
        assert seed_bit_offset(0, 0, 3, 10) == -3

    def test_addsub_rates(self):
        # many additions lower the seed, subtractions raise it
        assert seed_bit_offset(200, 0, 0, 8) < 0
        assert seed_bit_offset(0, 200, 0, 8) > 0
        assert seed_bit_offset(1, 1, 0, 8) == 0
