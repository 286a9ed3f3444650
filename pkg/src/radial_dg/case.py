"""Network data model, MATPOWER-style case parsing and radial topology checks.

Bus ids are 1-based everywhere in the public API. Internally the solver works
on dense 0-based positions; :meth:`NetworkCase.index_of` maps between the two.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import re
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np

INF = math.inf


class CaseFormatError(ValueError):
    """Raised for malformed case text or an inconsistent network model."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BusKind(enum.Enum):
    SLACK = 3
    PQ = 1


@dataclass(frozen=True)
class BusRecord:
    id: int
    kind: BusKind
    p_load: float
    q_load: float
    v_min: float = 0.95
    v_max: float = 1.05
    base_kv: float = 12.66
    # Fixed active injection (MW) from unity-pf generation at a PQ bus.
    p_dg: float = 0.0

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise CaseFormatError(f"bus {self.id}: v_min must be below v_max")
        if self.p_load < 0:
            raise CaseFormatError(f"bus {self.id}: negative active load")


@dataclass(frozen=True)
class BranchRecord:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    pl_max: float = INF
    ql_max: float = INF
    i_max: float = INF
    in_service: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise CaseFormatError(f"branch {self.from_bus}-{self.to_bus}: self loop")
        if self.r < 0:
            raise CaseFormatError(f"branch {self.from_bus}-{self.to_bus}: negative resistance")
        if self.r == 0 and self.x == 0:
            raise CaseFormatError(f"branch {self.from_bus}-{self.to_bus}: zero impedance")

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class SlackLimits:
    p_min: float = -10.0
    p_max: float = 10.0
    q_min: float = -10.0
    q_max: float = 10.0

    def __post_init__(self):
        if self.p_min > self.p_max or self.q_min > self.q_max:
            raise CaseFormatError("slack limits: min exceeds max")


@dataclass(frozen=True)
class NetworkCase:
    """Immutable network model. Loads are MW/MVAr, impedances p.u. on ``base_mva``."""

    base_mva: float
    buses: tuple[BusRecord, ...]
    branches: tuple[BranchRecord, ...]
    slack_limits: SlackLimits = field(default_factory=SlackLimits)
    name: str = "case"

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        if self.base_mva <= 0:
            raise CaseFormatError("baseMVA must be positive")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseFormatError(f"duplicate bus id {dup[0]}")
        n_slack = sum(b.kind is BusKind.SLACK for b in self.buses)
        if n_slack == 0:
            raise CaseFormatError("no slack bus")
        if n_slack > 1:
            raise CaseFormatError("multiple slack buses")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseFormatError(
                    f"branch {br.from_bus}-{br.to_bus} references an unknown bus")

    @cached_property
    def _positions(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def index_of(self, bus_id: int) -> int:
        try:
            return self._positions[bus_id]
        except KeyError:
            raise KeyError(f"bus {bus_id} not in case") from None

    def bus(self, bus_id: int) -> BusRecord:
        return self.buses[self.index_of(bus_id)]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack_bus(self) -> BusRecord:
        return next(b for b in self.buses if b.kind is BusKind.SLACK)

    @cached_property
    def solver_cache(self) -> dict:
        """Scratch space for derived solver data; safe because the case is immutable."""
        return {}

    def _column(self, name: str) -> np.ndarray:
        arr = np.array([getattr(b, name) for b in self.buses], dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def bus_ids(self) -> np.ndarray:
        arr = np.array([b.id for b in self.buses])
        arr.setflags(write=False)
        return arr

    @cached_property
    def p_load(self) -> np.ndarray:
        return self._column("p_load")

    @cached_property
    def q_load(self) -> np.ndarray:
        return self._column("q_load")

    @cached_property
    def p_dg(self) -> np.ndarray:
        return self._column("p_dg")

    @property
    def total_p_load(self) -> float:
        return float(sum(b.p_load for b in self.buses))

    @property
    def total_q_load(self) -> float:
        return float(sum(b.q_load for b in self.buses))

    def load_buses(self) -> list[int]:
        return [b.id for b in self.buses if b.kind is BusKind.PQ]

    def with_bus_values(self, **columns: dict[int, float]) -> NetworkCase:
        """Copy with per-bus field overrides, e.g. ``p_load={18: 0.2}``."""
        buses = list(self.buses)
        for name, values in columns.items():
            for bus_id, value in values.items():
                k = self.index_of(bus_id)
                buses[k] = dataclasses.replace(buses[k], **{name: value})
        return dataclasses.replace(self, buses=tuple(buses))

    def scaled_loads(self, factor: float) -> NetworkCase:
        buses = tuple(dataclasses.replace(b, p_load=b.p_load * factor, q_load=b.q_load * factor)
                      for b in self.buses)
        return dataclasses.replace(self, buses=buses)


# ---------------------------------------------------------------------------
# MATPOWER-style text format
# ---------------------------------------------------------------------------

_SCALAR = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^\[;]+?)\s*;?\s*$")
_MATRIX_START = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")

BUS_COLUMNS = 13
BRANCH_COLUMNS = 11
GEN_COLUMNS = 10


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_blocks(text: str) -> tuple[dict[str, str], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, str] = {}
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if current is None:
            m = _MATRIX_START.match(line)
            if m:
                current = m.group(1)
                if current in matrices:
                    raise CaseFormatError(f"matrix '{current}' defined twice", lineno)
                matrices[current] = []
                line = m.group(2)
            else:
                m = _SCALAR.match(line)
                if m:
                    scalars[m.group(1)] = m.group(2).strip()
                    continue
                if line.startswith("function") or line.startswith("end"):
                    continue
                raise CaseFormatError(f"unrecognised statement: {raw.strip()!r}", lineno)
        closing = "]" in line
        if closing:
            line, _, tail = line.partition("]")
            if tail.strip() not in ("", ";"):
                raise CaseFormatError("unexpected text after ']'", lineno)
        for row in line.split(";"):
            tokens = row.replace(",", " ").split()
            if not tokens:
                continue
            try:
                values = [float(t) for t in tokens]
            except ValueError:
                raise CaseFormatError(f"non-numeric entry in matrix '{current}'", lineno) from None
            matrices[current].append((lineno, values))
        if closing:
            current = None
    if current is not None:
        raise CaseFormatError(f"matrix '{current}' is not closed with ']'")
    return scalars, matrices


def _check_width(name: str, rows, width: int) -> None:
    for lineno, values in rows:
        if len(values) < width:
            raise CaseFormatError(
                f"'{name}' row has {len(values)} columns, expected at least {width}", lineno)


def _limit(value: float) -> float:
    return INF if value == 0 else value


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """Parse MATPOWER-style case text into a validated :class:`NetworkCase`.

    Only radial-feeder features are modelled. Bus shunts, areas, zones, tap
    ratios, phase shifts and the rateB/rateC columns are read but ignored, with
    a warning when they carry non-default values. ``rateA`` bounds both the
    active and reactive branch flow and, divided by ``baseMVA``, the p.u.
    current; 0 means unbounded. An optional ``branch_limits`` matrix with
    columns ``pl_max qL_max i_max`` (0 = unbounded) overrides rateA per branch.
    Generator rows at non-slack buses become fixed unity-pf injections.
    """
    scalars, matrices = _read_blocks(text)
    if "baseMVA" not in scalars:
        raise CaseFormatError("missing required scalar 'baseMVA'")
    try:
        base_mva = float(scalars["baseMVA"])
    except ValueError:
        raise CaseFormatError("baseMVA is not a number") from None
    for required in ("bus", "branch", "gen"):
        if required not in matrices:
            raise CaseFormatError(f"missing required matrix '{required}'")

    _check_width("bus", matrices["bus"], BUS_COLUMNS)
    _check_width("branch", matrices["branch"], BRANCH_COLUMNS)
    _check_width("gen", matrices["gen"], GEN_COLUMNS)

    ignored: set[str] = set()
    buses = []
    for lineno, row in matrices["bus"]:
        bus_id, kind_code = int(row[0]), int(row[1])
        if kind_code == 3:
            kind = BusKind.SLACK
        elif kind_code == 1:
            kind = BusKind.PQ
        else:
            raise CaseFormatError(f"bus {bus_id}: unsupported bus type {kind_code}", lineno)
        if row[4] or row[5]:
            ignored.add("Gs/Bs")
        try:
            buses.append(BusRecord(id=bus_id, kind=kind, p_load=row[2], q_load=row[3],
                                   v_min=row[12], v_max=row[11], base_kv=row[9]))
        except CaseFormatError as exc:
            raise CaseFormatError(str(exc), lineno) from None

    limits = matrices.get("branch_limits")
    if limits is not None:
        _check_width("branch_limits", limits, 3)
        if len(limits) != len(matrices["branch"]):
            raise CaseFormatError("branch_limits must have one row per branch")
    branches = []
    for k, (lineno, row) in enumerate(matrices["branch"]):
        if row[6] or row[7]:
            ignored.add("rateB/rateC")
        if row[8] not in (0.0, 1.0) or row[9]:
            ignored.add("ratio/angle")
        if limits is not None:
            pl, ql, imax = (_limit(v) for v in limits[k][1][:3])
        else:
            pl = ql = _limit(row[5])
            imax = _limit(row[5] / base_mva)
        try:
            branches.append(BranchRecord(
                from_bus=int(row[0]), to_bus=int(row[1]), r=row[2], x=row[3], b_shunt=row[4],
                pl_max=pl, ql_max=ql, i_max=imax, in_service=bool(row[10])))
        except CaseFormatError as exc:
            raise CaseFormatError(str(exc), lineno) from None

    for lineno, row in matrices["bus"]:
        if row[6] != 1 or row[10] != 1:
            ignored.add("area/zone")
            break
    if ignored:
        warnings.warn(f"ignoring unsupported case columns: {', '.join(sorted(ignored))}",
                      stacklevel=2)

    try:
        case = NetworkCase(base_mva=base_mva, buses=tuple(buses), branches=tuple(branches),
                           name=name)
    except CaseFormatError:
        raise
    slack_id = case.slack_bus.id
    slack_rows = [(ln, r) for ln, r in matrices["gen"] if int(r[0]) == slack_id and r[7] > 0]
    if not slack_rows:
        raise CaseFormatError(f"no in-service gen row at slack bus {slack_id}")
    _, g = slack_rows[0]
    slack = SlackLimits(p_min=g[9], p_max=g[8], q_min=g[4], q_max=g[3])
    injections: dict[int, float] = {}
    for lineno, row in matrices["gen"]:
        bus_id = int(row[0])
        if bus_id == slack_id or row[7] <= 0:
            continue
        if bus_id not in case._positions:
            raise CaseFormatError(f"gen row at unknown bus {bus_id}", lineno)
        injections[bus_id] = injections.get(bus_id, 0.0) + row[1]
    case = dataclasses.replace(case, slack_limits=slack)
    if injections:
        case = case.with_bus_values(p_dg=injections)
    return case


def _fmt(value: float) -> str:
    return repr(float(value)) if math.isfinite(value) else "0"


def serialize_case(case: NetworkCase) -> str:
    """Render ``case`` as MATPOWER-style text that :func:`parse_case` reads back exactly."""
    out = [f"function mpc = {case.name}", "mpc.version = '2';",
           f"mpc.baseMVA = {_fmt(case.base_mva)};", "", "mpc.bus = ["]
    for b in case.buses:
        cols = [b.id, b.kind.value, b.p_load, b.q_load, 0, 0, 1, 1, 0, b.base_kv, 1,
                b.v_max, b.v_min]
        out.append("\t" + "\t".join(_fmt(c) if isinstance(c, float) else str(c)
                                    for c in cols) + ";")
    out += ["];", "", "mpc.gen = ["]
    s = case.slack_limits
    out.append(f"\t{case.slack_bus.id}\t0\t0\t{_fmt(s.q_max)}\t{_fmt(s.q_min)}\t1\t"
               f"{_fmt(case.base_mva)}\t1\t{_fmt(s.p_max)}\t{_fmt(s.p_min)};")
    for b in case.buses:
        if b.p_dg:
            out.append(f"\t{b.id}\t{_fmt(b.p_dg)}\t0\t0\t0\t1\t{_fmt(case.base_mva)}\t1\t0\t0;")
    out += ["];", "", "mpc.branch = ["]
    for br in case.branches:
        out.append(f"\t{br.from_bus}\t{br.to_bus}\t{_fmt(br.r)}\t{_fmt(br.x)}\t"
                   f"{_fmt(br.b_shunt)}\t0\t0\t0\t0\t0\t{int(br.in_service)}\t-360\t360;")
    out += ["];", "", "mpc.branch_limits = ["]
    for br in case.branches:
        out.append(f"\t{_fmt(br.pl_max)}\t{_fmt(br.ql_max)}\t{_fmt(br.i_max)};")
    out += ["];", ""]
    return "\n".join(out)


def builtin_ieee33_text() -> str:
    return resources.files("radial_dg").joinpath("data/ieee33.m").read_text(encoding="utf-8")


def builtin_ieee33() -> NetworkCase:
    """The 33-bus, 32-branch Baran & Wu feeder at 12.66 kV (3.715 MW, 2.3 MVAr)."""
    return parse_case(builtin_ieee33_text(), name="ieee33")


BUILTIN_CASES = {"ieee33": builtin_ieee33}


def load_case(source: str) -> NetworkCase:
    """Load ``builtin:<name>`` or a path to a case file."""
    if source.startswith("builtin:"):
        key = source.split(":", 1)[1]
        if key not in BUILTIN_CASES:
            raise CaseFormatError(f"unknown builtin case '{key}'")
        return BUILTIN_CASES[key]()
    with open(source, encoding="utf-8") as fh:
        text = fh.read()
    stem = re.sub(r"\W", "_", source.rsplit("/", 1)[-1].rsplit(".", 1)[0]) or "case"
    return parse_case(text, name=stem)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TopologyReport:
    connected: bool
    is_tree: bool
    n_bus: int
    n_branch: int
    unreachable: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.connected and self.is_tree


def validate_radial(case: NetworkCase) -> TopologyReport:
    """Check that in-service branches form a spanning tree over all buses."""
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    live = [br for br in case.branches if br.in_service]
    for br in live:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    root = case.slack_bus.id
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    unreachable = tuple(sorted(set(adj) - seen))
    connected = not unreachable
    return TopologyReport(
        connected=connected,
        is_tree=connected and len(live) == case.n_bus - 1,
        n_bus=case.n_bus,
        n_branch=len(live),
        unreachable=unreachable,
    )
