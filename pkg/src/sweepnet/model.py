"""Elastoplastic spring networks and their loading signals.

A network is an oriented graph of springs with Hooke coefficients and elastic
limits, driven by displacement-controlled loadings along chains of springs and
by an optional offset input (either a control signal H or nodal stress
loadings f).  All time-dependent inputs are periodic piecewise-linear signals,
which are closed under every operation the rest of the package needs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import SchemaError

# Relative tolerance for rank and balance decisions: singular values (or
# residuals) below RANK_TOL times the largest entry are treated as zero.
RANK_TOL = 1e-10


def _as_number(x) -> float:
    """Accept ints, floats and fraction strings like '3/8'."""
    if isinstance(x, bool):
        raise SchemaError(f"expected a number, got {x!r}")
    if isinstance(x, (int, float)):
        return float(x)
    if isinstance(x, str):
        try:
            return float(Fraction(x))
        except (ValueError, ZeroDivisionError) as exc:
            raise SchemaError(f"cannot parse number {x!r}") from exc
    raise SchemaError(f"expected a number, got {type(x).__name__}")


# --------------------------------------------------------------------------- #
# Signals
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class PiecewiseLinearSignal:
    """Periodic signal interpolated linearly between breakpoints.

    Breakpoints live in [0, period); evaluation wraps around from the last
    breakpoint to the first one shifted by a period, so the signal is
    continuous and satisfies value(t + k*period) = value(t).
    """

    period: float
    times: np.ndarray   # (nb,), strictly increasing inside [0, period)
    values: np.ndarray  # (nb, dim)

    def __post_init__(self):
        period = float(self.period)
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if period <= 0.0:
            raise SchemaError("signal period must be positive")
        if times.ndim != 1 or times.size == 0:
            raise SchemaError("signal needs at least one breakpoint")
        if values.shape[0] != times.shape[0]:
            raise SchemaError("breakpoint times and values disagree in length")
        if np.any(times < 0.0) or np.any(times >= period):
            raise SchemaError("breakpoint times must lie in [0, period)")
        if np.any(np.diff(times) <= 0.0):
            raise SchemaError("breakpoint times must be strictly increasing")
        object.__setattr__(self, "period", period)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        # Extended knot table so one searchsorted covers the wraparound on
        # both ends of [0, period).
        knots = [times]
        vals = [values]
        if times[0] > 0.0:
            knots.insert(0, np.array([times[-1] - period]))
            vals.insert(0, values[-1:])
        knots.append(np.array([times[0] + period]))
        vals.append(values[:1])
        object.__setattr__(self, "_knots", np.concatenate(knots))
        object.__setattr__(self, "_kvals", np.concatenate(vals, axis=0))

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def evaluate(self, t: float) -> np.ndarray:
        return self.evaluate_batch(np.array([float(t)]))[0]

    def evaluate_batch(self, ts) -> np.ndarray:
        """Evaluate at many times at once; returns (len(ts), dim)."""
        ts = np.asarray(ts, dtype=float)
        tau = np.mod(ts, self.period)
        knots = self._knots
        kvals = self._kvals
        idx = np.clip(np.searchsorted(knots, tau, side="right") - 1, 0, len(knots) - 2)
        t0 = knots[idx]
        t1 = knots[idx + 1]
        w = (tau - t0) / (t1 - t0)
        return (1.0 - w)[:, None] * kvals[idx] + w[:, None] * kvals[idx + 1]

    __call__ = evaluate

    def breakpoints_in(self, t0: float, t1: float) -> np.ndarray:
        """All periodic images of the breakpoints inside [t0, t1]."""
        tol = 1e-12 * max(1.0, self.period, abs(t0), abs(t1))
        out = []
        for b in self.times:
            k = math.floor((t0 - b) / self.period)
            t = b + k * self.period
            while t <= t1 + tol:
                if t >= t0 - tol:
                    out.append(t)
                t += self.period
        return np.array(sorted(out))

    @staticmethod
    def constant(value, period: float) -> "PiecewiseLinearSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return PiecewiseLinearSignal(period, np.array([0.0]), value[None, :])


def evaluate_signal(signal: PiecewiseLinearSignal, t: float) -> np.ndarray:
    """Periodic linear interpolation of `signal` at time t >= 0."""
    return signal.evaluate(t)


def merge_breakpoint_grid(signals) -> np.ndarray:
    """Union of the breakpoint times of several signals with one period."""
    signals = [s for s in signals if s is not None]
    if not signals:
        return np.array([0.0])
    period = signals[0].period
    ts = np.concatenate([s.times for s in signals])
    ts = np.sort(ts)
    keep = np.concatenate([[True], np.diff(ts) > 1e-12 * max(1.0, period)])
    return ts[keep]


# --------------------------------------------------------------------------- #
# Network data
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Spring:
    """One elastoplastic spring: oriented edge, stiffness, elastic limits."""

    id: int
    tail: int
    head: int
    a: float
    c_minus: float
    c_plus: float


@dataclass(frozen=True, eq=False)
class DisplacementLoading:
    """Displacement-controlled loading along a chain of springs.

    `incidence` has one entry per spring: +1 if the chain traverses the spring
    from tail to head, -1 if against its orientation, 0 if unused.
    """

    incidence: np.ndarray
    signal: PiecewiseLinearSignal
    chain: tuple[int, ...] | None = None

    def __post_init__(self):
        inc = np.asarray(self.incidence, dtype=float)
        object.__setattr__(self, "incidence", inc)
        if self.signal.dimension != 1:
            raise SchemaError("displacement loading signal must be scalar")


def compile_chain(chain, springs: tuple[Spring, ...]) -> np.ndarray:
    """Turn a list of signed spring ids into an incidence vector.

    Entry +i means spring i is traversed tail-to-head, -i the other way; the
    springs must join end to end into a single open chain.
    """
    m = len(springs)
    by_id = {s.id: s for s in springs}
    inc = np.zeros(m)
    pos = None
    start = None
    for raw in chain:
        sid = int(raw)
        if sid == 0 or abs(sid) not in by_id:
            raise SchemaError(f"chain references unknown spring {raw!r}")
        s = by_id[abs(sid)]
        if inc[s.id - 1] != 0.0:
            raise SchemaError(f"chain uses spring {s.id} twice")
        frm, to = (s.tail, s.head) if sid > 0 else (s.head, s.tail)
        if pos is None:
            start = frm
        elif frm != pos:
            raise SchemaError(
                f"chain is not connected: spring {s.id} starts at node {frm}, "
                f"expected node {pos}"
            )
        pos = to
        inc[s.id - 1] = 1.0 if sid > 0 else -1.0
    if pos is None:
        raise SchemaError("chain must contain at least one spring")
    if pos == start:
        raise SchemaError("chain must connect two distinct nodes, not a loop")
    return inc


@dataclass(frozen=True, eq=False)
class SpringNetwork:
    """A network of m elastoplastic springs on n nodes plus its loadings.

    The offset input is either a control signal H (dimension n - q - 1) or a
    nodal stress signal f (dimension n, components summing to zero); when both
    are absent H defaults to zero.
    """

    n: int
    springs: tuple[Spring, ...]
    displacement_loadings: tuple[DisplacementLoading, ...] = ()
    H_signal: PiecewiseLinearSignal | None = None
    f_signal: PiecewiseLinearSignal | None = None

    def __post_init__(self):
        if self.n < 2:
            raise SchemaError("a network needs at least two nodes")
        ids = [s.id for s in self.springs]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate spring ids")
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise SchemaError("spring ids must be exactly 1..m")
        for s in self.springs:
            for node in (s.tail, s.head):
                if not (1 <= node <= self.n):
                    raise SchemaError(f"spring {s.id}: node id {node} out of range")
        for ld in self.displacement_loadings:
            if ld.incidence.shape != (self.m,):
                raise SchemaError("loading incidence has wrong length")
        if self.H_signal is not None and self.f_signal is not None:
            raise SchemaError("give either an H signal or an f signal, not both")
        object.__setattr__(self, "springs", tuple(sorted(self.springs, key=lambda s: s.id)))

    @property
    def m(self) -> int:
        return len(self.springs)

    @property
    def q(self) -> int:
        return len(self.displacement_loadings)

    @property
    def stiffness(self) -> np.ndarray:
        return np.array([s.a for s in self.springs])

    @property
    def c_minus(self) -> np.ndarray:
        return np.array([s.c_minus for s in self.springs])

    @property
    def c_plus(self) -> np.ndarray:
        return np.array([s.c_plus for s in self.springs])

    @property
    def R(self) -> np.ndarray:
        """Incidence vectors of the displacement loadings, one column each."""
        if self.q == 0:
            return np.zeros((self.m, 0))
        return np.column_stack([ld.incidence for ld in self.displacement_loadings])

    @property
    def offset_signal(self) -> PiecewiseLinearSignal | None:
        return self.H_signal if self.H_signal is not None else self.f_signal

    def all_signals(self):
        sigs = [ld.signal for ld in self.displacement_loadings]
        if self.offset_signal is not None:
            sigs.append(self.offset_signal)
        return sigs

    @property
    def period(self) -> float:
        sigs = self.all_signals()
        return sigs[0].period if sigs else 1.0

    def loading_signal(self) -> PiecewiseLinearSignal:
        """All displacement loadings stacked into a single q-dimensional signal."""
        grid = merge_breakpoint_grid([ld.signal for ld in self.displacement_loadings])
        if self.q == 0:
            return PiecewiseLinearSignal(self.period, grid, np.zeros((len(grid), 0)))
        vals = np.column_stack(
            [ld.signal.evaluate_batch(grid)[:, 0] for ld in self.displacement_loadings]
        )
        return PiecewiseLinearSignal(self.period, grid, vals)


def build_incidence(network: SpringNetwork) -> np.ndarray:
    """Spring-node incidence matrix D (m x n): row i is -1 at the tail of
    spring i, +1 at its head.  Its transpose is the node-edge incidence."""
    D = np.zeros((network.m, network.n))
    for i, s in enumerate(network.springs):
        if s.tail == s.head:
            # validate() reports self loops; the row would be identically zero
            continue
        D[i, s.tail - 1] = -1.0
        D[i, s.head - 1] = 1.0
    return D


def _connected(network: SpringNetwork) -> bool:
    adj = {i: set() for i in range(1, network.n + 1)}
    for s in network.springs:
        adj[s.tail].add(s.head)
        adj[s.head].add(s.tail)
    seen = {1}
    stack = [1]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == network.n


def _chain_is_path(incidence: np.ndarray, network: SpringNetwork) -> bool:
    """True when the nonzero entries trace a connected open chain."""
    used = [s for s, r in zip(network.springs, incidence) if r != 0.0]
    if not used:
        return False
    # Endpoint balance: the signed node sums must be +1/-1 at two nodes.
    node_sum = np.zeros(network.n)
    for s, r in zip(network.springs, incidence):
        if r != 0.0:
            node_sum[s.tail - 1] -= r
            node_sum[s.head - 1] += r
    nz = node_sum[node_sum != 0.0]
    if sorted(nz.tolist()) != [-1.0, 1.0]:
        return False
    # Connectivity of the chain subgraph.
    nodes = set()
    adj = {}
    for s in used:
        nodes.update((s.tail, s.head))
        adj.setdefault(s.tail, set()).add(s.head)
        adj.setdefault(s.head, set()).add(s.tail)
    first = used[0].tail
    seen = {first}
    stack = [first]
    while stack:
        u = stack.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen == nodes


@dataclass
class ValidationReport:
    """Outcome of validate(): violated invariants are data, not exceptions."""

    violations: list[str] = field(default_factory=list)
    details: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def lines(self) -> list[str]:
        out = [f"{k}: {v}" for k, v in self.details.items()]
        out += [f"VIOLATION: {v}" for v in self.violations]
        return out


def validate(network: SpringNetwork) -> ValidationReport:
    """Check every network invariant and report the violations found."""
    rep = ValidationReport()

    for s in network.springs:
        if not s.a > 0.0:
            rep.violations.append(f"spring {s.id}: stiffness must be positive (a={s.a})")
        if not s.c_minus < s.c_plus:
            rep.violations.append(
                f"spring {s.id}: elastic limits must satisfy c_minus < c_plus"
            )
        if s.tail == s.head:
            rep.violations.append(f"spring {s.id}: self loop (tail == head)")

    if _connected(network):
        rep.details["connectivity"] = "ok"
    else:
        rep.violations.append("underlying graph is not connected")
        rep.details["connectivity"] = "FAILED"

    periods = [s.period for s in network.all_signals()]
    if periods and any(abs(p - periods[0]) > 1e-12 * max(1.0, periods[0]) for p in periods):
        rep.violations.append("all loading signals must share one period")

    D = build_incidence(network)
    for k, ld in enumerate(network.displacement_loadings, start=1):
        if not np.all(np.isin(ld.incidence, (-1.0, 0.0, 1.0))):
            rep.violations.append(f"loading {k}: incidence entries must be -1, 0 or +1")
        elif not np.any(ld.incidence):
            rep.violations.append(f"loading {k}: incidence vector is zero")
        elif not _chain_is_path(ld.incidence, network):
            rep.violations.append(f"loading {k}: incidence does not trace a chain of springs")

    if network.q > 0:
        DtR = D.T @ network.R
        scale = max(1.0, float(np.max(np.abs(DtR))))
        rank = int(np.linalg.matrix_rank(DtR, tol=RANK_TOL * scale))
        rep.details["rank"] = f"rank(D^T R) = {rank} (q = {network.q})"
        if rank != network.q:
            rep.violations.append(
                f"displacement loadings are not independent: rank(D^T R) = {rank} < q = {network.q}"
            )
    else:
        rep.details["rank"] = "n/a (no displacement loadings)"

    dim_H = network.n - network.q - 1
    if network.f_signal is not None:
        f = network.f_signal
        if f.dimension != network.n:
            rep.violations.append(
                f"f signal dimension {f.dimension} != node count {network.n}"
            )
        else:
            vals = f.values
            scale = max(1.0, float(np.max(np.abs(vals))) if vals.size else 0.0)
            worst = float(np.max(np.abs(vals.sum(axis=1)))) if vals.size else 0.0
            if worst > RANK_TOL * scale:
                rep.violations.append(
                    f"static balance violated: nodal stresses sum to {worst:.3e}"
                )
                rep.details["balance"] = "FAILED"
            else:
                rep.details["balance"] = "ok (sums to zero at every breakpoint)"
    elif network.H_signal is not None:
        rep.details["balance"] = "n/a (H signal given)"
        if network.H_signal.dimension != dim_H:
            rep.violations.append(
                f"H signal dimension {network.H_signal.dimension} != n - q - 1 = {dim_H}"
            )
    else:
        rep.details["balance"] = "n/a (no offset input, H defaults to zero)"

    return rep


# --------------------------------------------------------------------------- #
# On-disk description
# --------------------------------------------------------------------------- #


def _parse_signal(doc, what: str) -> PiecewiseLinearSignal:
    try:
        period = _as_number(doc["period"])
        points = doc["points"]
        times = [_as_number(p[0]) for p in points]
        values = []
        for p in points:
            v = p[1]
            if isinstance(v, (list, tuple)):
                values.append([_as_number(x) for x in v])
            else:
                values.append([_as_number(v)])
    except (KeyError, TypeError, IndexError) as exc:
        raise SchemaError(f"{what}: malformed signal document") from exc
    try:
        return PiecewiseLinearSignal(period, np.array(times), np.array(values))
    except SchemaError as exc:
        raise SchemaError(f"{what}: {exc}") from exc


def network_from_dict(doc: dict) -> SpringNetwork:
    if not isinstance(doc, dict):
        raise SchemaError("network document must be a mapping")
    try:
        n = int(doc["nodes"])
        spring_docs = doc["springs"]
    except (KeyError, TypeError) as exc:
        raise SchemaError("network document needs 'nodes' and 'springs'") from exc
    springs = []
    for sd in spring_docs:
        try:
            springs.append(
                Spring(
                    id=int(sd["id"]),
                    tail=int(sd["tail"]),
                    head=int(sd["head"]),
                    a=_as_number(sd["a"]),
                    c_minus=_as_number(sd["c_minus"]),
                    c_plus=_as_number(sd["c_plus"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed spring entry {sd!r}") from exc
    springs = tuple(springs)

    loadings = []
    for k, ld in enumerate(doc.get("displacement_loadings", []), start=1):
        try:
            chain = tuple(int(x) for x in ld["chain"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"loading {k}: malformed chain") from exc
        signal = _parse_signal(ld.get("signal"), f"loading {k}")
        incidence = compile_chain(chain, springs)
        loadings.append(DisplacementLoading(incidence, signal, chain))

    H = _parse_signal(doc["H_signal"], "H_signal") if "H_signal" in doc else None
    f = _parse_signal(doc["f_signal"], "f_signal") if "f_signal" in doc else None
    return SpringNetwork(n, springs, tuple(loadings), H, f)


def network_to_dict(network: SpringNetwork) -> dict:
    def sig_doc(sig: PiecewiseLinearSignal, scalar: bool) -> dict:
        points = []
        for t, v in zip(sig.times, sig.values):
            points.append([float(t), float(v[0]) if scalar else [float(x) for x in v]])
        return {"period": float(sig.period), "points": points}

    doc = {
        "nodes": network.n,
        "springs": [
            {
                "id": s.id,
                "tail": s.tail,
                "head": s.head,
                "a": s.a,
                "c_minus": s.c_minus,
                "c_plus": s.c_plus,
            }
            for s in network.springs
        ],
        "displacement_loadings": [
            {
                "chain": list(ld.chain) if ld.chain is not None else _incidence_to_chain(ld, network),
                "signal": sig_doc(ld.signal, scalar=True),
            }
            for ld in network.displacement_loadings
        ],
    }
    if network.H_signal is not None:
        doc["H_signal"] = sig_doc(network.H_signal, scalar=False)
    if network.f_signal is not None:
        doc["f_signal"] = sig_doc(network.f_signal, scalar=False)
    return doc


def _incidence_to_chain(ld: DisplacementLoading, network: SpringNetwork) -> list[int]:
    # Reconstruct a signed id list by walking the chain from its start node.
    used = {s.id: r for s, r in zip(network.springs, ld.incidence) if r != 0.0}
    by_id = {s.id: s for s in network.springs}
    node_sum = np.zeros(network.n)
    for sid, r in used.items():
        s = by_id[sid]
        node_sum[s.tail - 1] -= r
        node_sum[s.head - 1] += r
    start_nodes = np.nonzero(node_sum == -1.0)[0]
    if start_nodes.size != 1:
        raise SchemaError("cannot serialize loading: incidence is not a chain")
    pos = int(start_nodes[0]) + 1
    chain = []
    remaining = dict(used)
    while remaining:
        for sid, r in remaining.items():
            s = by_id[sid]
            frm = s.tail if r > 0 else s.head
            if frm == pos:
                chain.append(sid if r > 0 else -sid)
                pos = s.head if r > 0 else s.tail
                del remaining[sid]
                break
        else:
            raise SchemaError("cannot serialize loading: incidence is not a chain")
    return chain


def parse_network(source) -> SpringNetwork:
    """Read a network from a JSON document (path, JSON text, or dict)."""
    if isinstance(source, dict):
        return network_from_dict(source)
    text = None
    if hasattr(source, "read"):
        text = source.read()
    else:
        s = str(source)
        if s.lstrip().startswith("{"):
            text = s
        else:
            try:
                with open(s, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise SchemaError(f"cannot read network file {s!r}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"network file is not valid JSON: {exc}") from exc
    return network_from_dict(doc)


def serialize_network(network: SpringNetwork) -> str:
    """JSON text whose parse reproduces every field of `network` bit-exactly."""
    return json.dumps(network_to_dict(network), indent=2, sort_keys=True)
