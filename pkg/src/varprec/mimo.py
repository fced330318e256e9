"""Zero-forcing precoding case study.

Builds W = H^H (H H^H)^(-1) as a recorded expression graph over complex
matrices (complex and matrix arithmetic decomposed into the five basic real
operations), runs it under the different computing schemes, and measures
sum rate and bit error rate against a reference-precision run.

Complex bookkeeping: the op set has no negation, so the builder carries a
symbolic sign per scalar sub-expression and folds it into add/sub operand
order.  Conjugation is therefore free, the Gram matrix is built with
Hermitian sharing (G[j][i] reuses G[i][j]'s nodes), and diagonal Gram
entries have structurally zero imaginary parts, which keeps the recorded
graph clear of guaranteed exact cancellations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ebfp import EbfpParams, DEFAULT_PARAMS, decode
from .graph import ExecutionResult, ExprGraph, GraphExecutionError, execute
from .optimizer import (
    ComplexityModel,
    UtilityConfig,
    fixed_plan,
    offline_vpc,
    online_vpc,
    plan_metrics,
    random_blockwise_plan,
)

REFERENCE_PRECISION = 64
CONST_PRECISION = 60
#: published basic-operation count of the 8x8 precoder, for order-of-
#: magnitude comparison (the decomposition below differs in detail)
REFERENCE_ZF_OP_COUNT_8X8 = 20168


# ---------------------------------------------------------------------------
# signed references and complex emission


@dataclass(frozen=True)
class Ref:
    """Signed reference to a graph node; node=None encodes a literal zero."""

    node: Optional[int]
    sign: int = 1
    one: bool = False

    @property
    def is_zero(self) -> bool:
        return self.node is None

    def flip(self) -> "Ref":
        if self.is_zero:
            return self
        return Ref(self.node, -self.sign, self.one)


ZERO = Ref(None)


@dataclass(frozen=True)
class CRef:
    re: Ref
    im: Ref

    def conj(self) -> "CRef":
        return CRef(self.re, self.im.flip())


class ComplexEmitter:
    """Records real ops for complex arithmetic with sign/zero/one folding."""

    def __init__(self, graph: ExprGraph, part: str = None):
        self.graph = graph
        self.part = part
        self._one: Optional[int] = None

    def one_ref(self) -> Ref:
        if self._one is None:
            self._one = self.graph.add_input()
        return Ref(self._one, 1, one=True)

    def _rec(self, op, operands) -> int:
        return self.graph.record(op, operands, part=self.part)

    def radd(self, a: Ref, b: Ref) -> Ref:
        if a.is_zero:
            return b
        if b.is_zero:
            return a
        if a.sign == b.sign:
            return Ref(self._rec("add", [a.node, b.node]), a.sign)
        if a.sign > 0:
            return Ref(self._rec("sub", [a.node, b.node]), 1)
        return Ref(self._rec("sub", [b.node, a.node]), 1)

    def rsub(self, a: Ref, b: Ref) -> Ref:
        return self.radd(a, b.flip())

    def rmul(self, a: Ref, b: Ref) -> Ref:
        if a.is_zero or b.is_zero:
            return ZERO
        if a.one:
            return Ref(b.node, a.sign * b.sign, b.one)
        if b.one:
            return Ref(a.node, a.sign * b.sign, a.one)
        return Ref(self._rec("mul", [a.node, b.node]), a.sign * b.sign)

    def rdiv(self, a: Ref, b: Ref) -> Ref:
        if b.is_zero:
            raise ValueError("structural division by zero")
        if a.is_zero:
            return ZERO
        if b.one:
            return Ref(a.node, a.sign * b.sign, a.one)
        return Ref(self._rec("div", [a.node, b.node]), a.sign * b.sign)

    def cadd(self, a: CRef, b: CRef) -> CRef:
        return CRef(self.radd(a.re, b.re), self.radd(a.im, b.im))

    def csub(self, a: CRef, b: CRef) -> CRef:
        return CRef(self.rsub(a.re, b.re), self.rsub(a.im, b.im))

    def cmul(self, a: CRef, b: CRef) -> CRef:
        # a * conj(a) collapses to |a|^2: exactly real by construction
        if a.re == b.re and a.im == b.im.flip():
            mag = self.radd(self.rmul(a.re, a.re), self.rmul(a.im, a.im))
            return CRef(mag, ZERO)
        re = self.rsub(self.rmul(a.re, b.re), self.rmul(a.im, b.im))
        im = self.radd(self.rmul(a.re, b.im), self.rmul(a.im, b.re))
        return CRef(re, im)

    def cdiv(self, a: CRef, b: CRef) -> CRef:
        # conjugate method: a * conj(b) over |b|^2, then two real divisions
        if b.im.is_zero:
            return CRef(self.rdiv(a.re, b.re), self.rdiv(a.im, b.re))
        den = self.radd(self.rmul(b.re, b.re), self.rmul(b.im, b.im))
        num = self.cmul(a, b.conj())
        return CRef(self.rdiv(num.re, den), self.rdiv(num.im, den))


# ---------------------------------------------------------------------------
# channel and recorded precoder


@dataclass(frozen=True)
class ChannelMatrix:
    """k_users x n_t complex entries as exact dyadic rationals."""

    re: Tuple[Tuple[Fraction, ...], ...]
    im: Tuple[Tuple[Fraction, ...], ...]

    @property
    def k_users(self) -> int:
        return len(self.re)

    @property
    def n_t(self) -> int:
        return len(self.re[0])

    def as_complex(self) -> np.ndarray:
        return np.array([[float(r) + 1j * float(i) for r, i in zip(rr, ii)]
                         for rr, ii in zip(self.re, self.im)])


def gen_channel(rng: np.random.Generator, k_users: int, n_t: int) -> ChannelMatrix:
    """i.i.d. circularly symmetric complex Gaussian entries of unit variance,
    materialized exactly as 53-bit dyadic rationals."""
    scale = math.sqrt(0.5)
    re = rng.normal(0.0, scale, (k_users, n_t))
    im = rng.normal(0.0, scale, (k_users, n_t))
    return ChannelMatrix(tuple(tuple(Fraction(v) for v in row) for row in re),
                         tuple(tuple(Fraction(v) for v in row) for row in im))


@dataclass
class ZfGraph:
    """Recorded precoder with handles into its inputs and outputs."""

    graph: ExprGraph
    k_users: int
    n_t: int
    h_refs: List[List[CRef]]          # k x n_t channel entries
    gram_refs: List[List[CRef]]       # k x k Gram product
    ginv_refs: List[List[CRef]]       # k x k inverse
    w_refs: List[List[CRef]]          # n_t x k precoder
    one_node: Optional[int]

    def input_values(self, h: ChannelMatrix) -> Dict[int, Fraction]:
        vals: Dict[int, Fraction] = {}
        for i in range(self.k_users):
            for j in range(self.n_t):
                r = self.h_refs[i][j]
                vals[r.re.node] = h.re[i][j]
                vals[r.im.node] = h.im[i][j]
        if self.one_node is not None:
            vals[self.one_node] = Fraction(1)
        return vals

    def input_precisions(self, storage_bits: int = 53) -> Dict[int, int]:
        prec = {nid: storage_bits for nid in self.graph.inputs}
        if self.one_node is not None:
            prec[self.one_node] = CONST_PRECISION
        return prec

    def _entry(self, result: ExecutionResult, ref: CRef) -> complex:
        def val(r: Ref) -> float:
            if r.is_zero:
                return 0.0
            return r.sign * float(decode(result.values[r.node]))
        return complex(val(ref.re), val(ref.im))

    def matrix(self, result: ExecutionResult, refs: List[List[CRef]]) -> np.ndarray:
        return np.array([[self._entry(result, r) for r in row] for row in refs])

    def w_matrix(self, result: ExecutionResult) -> np.ndarray:
        return self.matrix(result, self.w_refs)


def build_zf_graph(k_users: int, n_t: int) -> ZfGraph:
    """Record W = H^H (H H^H)^(-1) in three tagged parts: the Gram product,
    its inverse by unrolled Gauss-Jordan elimination, and the final product.

    The recorded graph is value-free, so pivots are the diagonal entries
    (sound for the Hermitian positive definite Gram of a generic channel);
    a vanishing pivot surfaces at execution as a division-by-zero error for
    the offending node.
    """
    if not 1 <= k_users <= n_t:
        raise ValueError("need 1 <= k_users <= n_t")
    g = ExprGraph()
    em = ComplexEmitter(g)
    h: List[List[CRef]] = []
    for _i in range(k_users):
        row = []
        for _j in range(n_t):
            row.append(CRef(Ref(g.add_input()), Ref(g.add_input())))
        h.append(row)

    # part 1: Gram product with Hermitian sharing
    em.part = "gram"
    gram: List[List[Optional[CRef]]] = [[None] * k_users for _ in range(k_users)]
    for i in range(k_users):
        for j in range(i, k_users):
            acc: Optional[CRef] = None
            for l in range(n_t):
                term = em.cmul(h[i][l], h[j][l].conj())
                acc = term if acc is None else em.cadd(acc, term)
            gram[i][j] = acc
            if j != i:
                gram[j][i] = acc.conj()

    # part 2: inverse by Gauss-Jordan on [G | I], diagonal pivots
    em.part = "inverse"
    one = em.one_ref()
    k = k_users
    A: List[List[CRef]] = [list(gram[i]) + [CRef(one, ZERO) if j == i else CRef(ZERO, ZERO)
                                            for j in range(k)]
                           for i in range(k)]
    for i in range(k):
        pivot = A[i][i]
        if pivot.re.is_zero and pivot.im.is_zero:
            raise ValueError("structurally singular Gram matrix")
        A[i] = [em.cdiv(entry, pivot) if m != i else CRef(one, ZERO)
                for m, entry in enumerate(A[i])]
        for j in range(k):
            if j == i:
                continue
            factor = A[j][i]
            if factor.re.is_zero and factor.im.is_zero:
                continue
            A[j] = [entry if m == i else em.csub(entry, em.cmul(factor, A[i][m]))
                    for m, entry in enumerate(A[j])]
            A[j][i] = CRef(ZERO, ZERO)
    ginv = [row[k:] for row in A]

    # part 3: W = H^H Ginv
    em.part = "precode"
    w: List[List[CRef]] = []
    for l in range(n_t):
        row = []
        for j in range(k):
            acc: Optional[CRef] = None
            for i in range(k):
                term = em.cmul(h[i][l].conj(), ginv[i][j])
                acc = term if acc is None else em.cadd(acc, term)
            row.append(acc)
        w.append(row)

    seen = set()
    for row in w:
        for ref in row:
            for r in (ref.re, ref.im):
                if not r.is_zero and r.node not in seen:
                    seen.add(r.node)
                    g.mark_output(r.node)
    return ZfGraph(g, k_users, n_t, h, [list(r) for r in gram], ginv, w, em._one)


def zf_reference(h: ChannelMatrix, zfg: ZfGraph = None,
                 params: EbfpParams = DEFAULT_PARAMS) -> Tuple[np.ndarray, ExecutionResult, ZfGraph]:
    """Precoder at reference precision (fixed 64-bit plan); warns on badly
    conditioned channels."""
    zfg = zfg or build_zf_graph(h.k_users, h.n_t)
    hc = h.as_complex()
    cond = np.linalg.cond(hc @ hc.conj().T)
    if cond > 1e9:
        warnings.warn(f"Gram condition number {cond:.3e}; reference precoder may be inaccurate")
    plan = fixed_plan(zfg.graph, REFERENCE_PRECISION)
    res = execute(zfg.graph, plan, zfg.input_values(h), zfg.input_precisions(), params)
    return zfg.w_matrix(res), res, zfg


def gram_inverse_residual(zfg: ZfGraph, result: ExecutionResult) -> float:
    """max |G Ginv - I| from the executed node values."""
    G = zfg.matrix(result, zfg.gram_refs)
    Gi = zfg.matrix(result, zfg.ginv_refs)
    return float(np.abs(G @ Gi - np.eye(zfg.k_users)).max())


# ---------------------------------------------------------------------------
# link-level metrics


def _normalize_columns(w: np.ndarray) -> np.ndarray:
    out = w.astype(complex).copy()
    for k in range(out.shape[1]):
        n = np.linalg.norm(out[:, k])
        if n > 0:
            out[:, k] = out[:, k] / n
    return out


def sum_rate(h: np.ndarray, w: np.ndarray, snr_db: float, total_power: float = 1.0) -> float:
    """Sum rate with unit-norm precoder columns and an equal power split.

    SINR_k = (P/K)|h_k w_k|^2 / (sum_{j!=k} (P/K)|h_k w_j|^2 + noise), with
    the noise power set by the total-transmit-power to noise ratio.
    """
    k_users = h.shape[0]
    wn = _normalize_columns(w)
    if not np.isfinite(wn).all():
        return 0.0
    noise = total_power * 10.0 ** (-snr_db / 10.0)
    p_user = total_power / k_users
    gains = np.abs(h @ wn) ** 2  # [k_user, k_stream]
    rate = 0.0
    for k in range(k_users):
        sig = p_user * gains[k, k]
        interf = p_user * (gains[k, :].sum() - gains[k, k])
        rate += math.log2(1.0 + sig / (interf + noise))
    return rate


QPSK_POINTS = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2.0)


def ber_sim(h: np.ndarray, w: np.ndarray, snr_db: float, n_symbols: int,
            rng: np.random.Generator, w_ref: np.ndarray = None,
            total_power: float = 1.0) -> float:
    """QPSK bit error rate of precoding with ``w``.

    Precoded transmission uses the computed (variable-precision) precoder;
    the channel and detection run at reference precision, with each user
    equalized by the reference effective gain.
    """
    k_users = h.shape[0]
    wn = _normalize_columns(w) * math.sqrt(total_power / k_users)
    wr = _normalize_columns(w_ref if w_ref is not None else w) * math.sqrt(total_power / k_users)
    noise_var = total_power * 10.0 ** (-snr_db / 10.0)

    bits = rng.integers(0, 2, (2 * k_users, n_symbols))
    sym = ((1 - 2 * bits[0::2]) + 1j * (1 - 2 * bits[1::2])) / math.sqrt(2.0)
    x = wn @ sym
    y = h @ x
    if noise_var > 0:
        y = y + math.sqrt(noise_var / 2.0) * (rng.standard_normal(y.shape)
                                              + 1j * rng.standard_normal(y.shape))
    g_ref = np.diag(h @ wr)
    errors = 0
    for k in range(k_users):
        gk = g_ref[k]
        if gk == 0:
            errors += 2 * n_symbols  # undetectable user: all bits lost
            continue
        z = y[k] / gk
        errors += int(np.count_nonzero((z.real < 0) != (sym.real[k] < 0)))
        errors += int(np.count_nonzero((z.imag < 0) != (sym.imag[k] < 0)))
    return errors / (2.0 * k_users * n_symbols)


# ---------------------------------------------------------------------------
# sweep harness


SCHEMES = ("fixed", "offline", "online", "random-blockwise")


@dataclass
class SimConfig:
    n_t: int = 4
    k_users: int = 4
    snr_db: float = 10.0
    trials: int = 20
    seed: int = 1
    schemes: Sequence[str] = SCHEMES
    sweep: Sequence[float] = (3, 5, 6, 8, 12, 32)
    x_min: int = 2
    x_max: int = 64
    e_b: int = 10
    storage_bits: int = 53
    alpha_tol_bits: float = 0.25
    ber_symbols: int = 0

    def __post_init__(self):
        if self.k_users > self.n_t:
            raise ValueError("k_users must not exceed n_t")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")


@dataclass
class SweepPoint:
    scheme: str
    target_avg_bits: float
    realized_avg_bits: float
    total_complexity: float
    sum_rate_mean: float
    sum_rate_stderr: float
    ber: float
    trials: int
    failures: int
    seed: int
    #: per-trial sum rates, in channel order (for paired comparisons)
    rates: List[float] = field(default_factory=list)


def calibrate_alpha(avg_of_alpha: Callable[[float], float], target: float,
                    tol: float = 0.25, lo: float = 1e-20, hi: float = 1e4,
                    max_iter: int = 60) -> float:
    """Bisection on log(alpha): the average precision falls as alpha grows.

    Matches from above: accepts a realized average in [target, target+tol],
    so an adaptive plan is never cheaper than the fixed plan it is paired
    with at the same nominal point.
    """
    f_lo, f_hi = avg_of_alpha(lo), avg_of_alpha(hi)
    if target >= f_lo:
        return lo
    if target <= f_hi:
        return hi
    best = None
    for _ in range(max_iter):
        mid = math.exp(0.5 * (math.log(lo) + math.log(hi)))
        f_mid = avg_of_alpha(mid)
        if target <= f_mid <= target + tol:
            return mid
        if f_mid > target:
            lo = mid
            best = mid  # realized above target: acceptable fallback side
        else:
            hi = mid
    return best if best is not None else mid


def _plan_cfg(cfg: SimConfig, alpha: float) -> UtilityConfig:
    return UtilityConfig(alpha=alpha, x_min=cfg.x_min, x_max=cfg.x_max)


def pareto_sweep(cfg: SimConfig, cm: ComplexityModel = None,
                 progress: Callable[[str], None] = None) -> List[SweepPoint]:
    """Run every (scheme, target average precision) cell over paired channels.

    Channel matrices are generated once from the seed and reused across all
    schemes and targets.  Offline/online trade-off weights are calibrated by
    bisection to hit each target average precision; fixed-length uses the
    matching integer precision directly.  Trials that fail to compute (zero
    pivot, exact cancellation at very low precision) score zero rate and
    chance-level BER.
    """
    cm = cm or ComplexityModel()
    say = progress or (lambda s: None)
    zfg = build_zf_graph(cfg.k_users, cfg.n_t)
    rng = np.random.default_rng(cfg.seed)
    channels = [gen_channel(rng, cfg.k_users, cfg.n_t) for _ in range(cfg.trials)]
    h_cx = [h.as_complex() for h in channels]
    refs = []
    say(f"reference precoders for {cfg.trials} channels")
    for h in channels:
        w_ref, _, _ = zf_reference(h, zfg)
        refs.append(w_ref)

    def run_trials(plans_or_results) -> Tuple[List[float], List[float], List[float], float, int]:
        rates, avgs, totals = [], [], []
        bers: List[Tuple[int, int]] = []
        failures = 0
        for t, item in enumerate(plans_or_results):
            plan, result = item
            if result is None and plan is not None:
                try:
                    result = execute(zfg.graph, plan, zfg.input_values(channels[t]),
                                     zfg.input_precisions(cfg.storage_bits))
                except GraphExecutionError:
                    result = None
            if result is None:
                failures += 1
                rates.append(0.0)
                if cfg.ber_symbols:
                    bers.append((2 * cfg.k_users * cfg.ber_symbols,
                                 2 * cfg.k_users * cfg.ber_symbols))
                if plan is not None:
                    a, tot = plan_metrics(zfg.graph, plan, cm)
                    avgs.append(a)
                    totals.append(tot)
                continue
            w = zfg.w_matrix(result)
            rates.append(sum_rate(h_cx[t], w, cfg.snr_db))
            a, tot = plan_metrics(zfg.graph, plan, cm)
            avgs.append(a)
            totals.append(tot)
            if cfg.ber_symbols:
                ber_rng = np.random.default_rng((cfg.seed, 77, t))
                b = ber_sim(h_cx[t], w, cfg.snr_db, cfg.ber_symbols, ber_rng, refs[t])
                bers.append((int(round(b * 2 * cfg.k_users * cfg.ber_symbols)),
                             2 * cfg.k_users * cfg.ber_symbols))
        ber = (sum(e for e, _ in bers) / sum(n for _, n in bers)) if bers else float("nan")
        return rates, avgs, totals, ber, failures

    points: List[SweepPoint] = []
    for scheme in cfg.schemes:
        for ti, target in enumerate(cfg.sweep):
            say(f"{scheme} @ {target} bits")
            if scheme == "fixed":
                x = int(min(cfg.x_max, max(cfg.x_min, round(target))))
                plan = fixed_plan(zfg.graph, x)
                cells = [(plan, None) for _ in range(cfg.trials)]
            elif scheme == "offline":
                def avg_off(alpha):
                    return plan_metrics(zfg.graph, offline_vpc(
                        zfg.graph, _plan_cfg(cfg, alpha), cm, cfg.e_b), cm)[0]
                alpha = calibrate_alpha(avg_off, target, cfg.alpha_tol_bits)
                plan = offline_vpc(zfg.graph, _plan_cfg(cfg, alpha), cm, cfg.e_b)
                cells = [(plan, None) for _ in range(cfg.trials)]
            elif scheme == "online":
                probe = channels[: min(cfg.trials, 4)]

                ip = zfg.input_precisions(cfg.storage_bits)

                def avg_on(alpha):
                    vals = []
                    for h in probe:
                        try:
                            _, p = online_vpc(zfg.graph, _plan_cfg(cfg, alpha), cm,
                                              zfg.input_values(h), cfg.e_b, ip)
                            vals.append(plan_metrics(zfg.graph, p, cm)[0])
                        except GraphExecutionError:
                            continue
                    return float(np.mean(vals)) if vals else cfg.x_min
                alpha = calibrate_alpha(avg_on, target, cfg.alpha_tol_bits)
                cells = []
                for h in channels:
                    try:
                        res, p = online_vpc(zfg.graph, _plan_cfg(cfg, alpha), cm,
                                            zfg.input_values(h), cfg.e_b, ip)
                        cells.append((p, res))
                    except GraphExecutionError:
                        cells.append((None, None))
            else:  # random-blockwise
                draw_rng = np.random.default_rng((cfg.seed, 31, ti))
                hi = int(min(cfg.x_max, max(cfg.x_min + 1, round(max(cfg.sweep)))))
                cells = [(random_blockwise_plan(zfg.graph, draw_rng, cfg.x_min, hi), None)
                         for _ in range(cfg.trials)]

            rates, avgs, totals, ber, failures = run_trials(cells)
            n = len(rates)
            stderr = float(np.std(rates, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            points.append(SweepPoint(
                scheme=scheme,
                target_avg_bits=float(target),
                realized_avg_bits=float(np.mean(avgs)) if avgs else float("nan"),
                total_complexity=float(np.mean(totals)) if totals else float("nan"),
                sum_rate_mean=float(np.mean(rates)),
                sum_rate_stderr=stderr,
                ber=ber,
                trials=cfg.trials,
                failures=failures,
                seed=cfg.seed,
                rates=[float(r) for r in rates],
            ))
    return points


def reference_rate(cfg: SimConfig) -> float:
    """Mean reference-precision sum rate over the sweep's channel set."""
    zfg = build_zf_graph(cfg.k_users, cfg.n_t)
    rng = np.random.default_rng(cfg.seed)
    rates = []
    for _ in range(cfg.trials):
        h = gen_channel(rng, cfg.k_users, cfg.n_t)
        w, _, _ = zf_reference(h, zfg)
        rates.append(sum_rate(h.as_complex(), w, cfg.snr_db))
    return float(np.mean(rates))


def precision_histogram(zfg: ZfGraph, plan) -> Dict[Tuple[int, str], int]:
    """Counts of (precision, op kind) over the plan's nodes."""
    assignment = getattr(plan, "assignment", plan)
    out: Dict[Tuple[int, str], int] = {}
    for nid, x in assignment.items():
        key = (x, zfg.graph.nodes[nid].op.value)
        out[key] = out.get(key, 0) + 1
    return out
