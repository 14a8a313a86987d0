# ABOUTME: Gate-level static timing and power analysis over characterized libraries, plus greedy drive sizing.
# ABOUTME: Netlists are acyclic single-driver DAGs; delays come from clamped bilinear NLDM lookups.

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from cellgnn.errors import CoverageError, GateNetlistError
from cellgnn.libgen import CellEntry, CharLibrary

logger = logging.getLogger(__name__)

DEFAULT_ACTIVITY = 0.1
_SECONDS_PER_UNIT = {"ps": 1e-12, "ns": 1e-9}
_DRIVE = re.compile(r"^(?P<base>.+?)X(?P<drive>\d+)$")


@dataclass(frozen=True)
class Gate:
    name: str
    cell: str
    output: str
    inputs: Tuple[str, ...]


@dataclass
class GateNetlist:
    """
    Combinational gate-level netlist.

    Attributes:
        gates: Gates in topological order.
        inputs: Primary input nets.
        outputs: Primary output nets.
        period: Clock period in the library time unit.
        input_slew: Per-PI slew; '*' holds the default.
        output_load: Per-PO load in fF; '*' holds the default.
        activity: Per-net toggle probability; '*' holds the default.
    """

    gates: List[Gate]
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    period: float
    input_slew: Dict[str, float] = field(default_factory=dict)
    output_load: Dict[str, float] = field(default_factory=dict)
    activity: Dict[str, float] = field(default_factory=dict)
    name: str = ""

    def slew_of(self, net: str) -> float:
        return self.input_slew.get(net, self.input_slew.get("*", 0.0))

    def load_of(self, net: str) -> float:
        return self.output_load.get(net, self.output_load.get("*", 0.0))

    def activity_of(self, net: str) -> float:
        return self.activity.get(net, self.activity.get("*", DEFAULT_ACTIVITY))

    def fanout(self) -> Dict[str, List[Tuple[Gate, int]]]:
        """Net -> (gate, input position) pairs it drives."""
        table: Dict[str, List[Tuple[Gate, int]]] = {}
        for gate in self.gates:
            for position, net in enumerate(gate.inputs):
                table.setdefault(net, []).append((gate, position))
        return table

    def with_cells(self, assignment: Mapping[str, str]) -> "GateNetlist":
        """Copy with some gates rebound to other cells."""
        gates = [replace(g, cell=assignment.get(g.name, g.cell)) for g in self.gates]
        return replace(self, gates=gates)

    def cells(self) -> Dict[str, str]:
        return {g.name: g.cell for g in self.gates}


def _number(token: str, number: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise GateNetlistError(f"line {number}: {what} must be a number, got '{token}'")


def parse_gatelist(text: str, known_cells: Optional[Iterable[str]] = None, name: str = "") -> GateNetlist:
    """
    Parse the gate-list text format.

    Lines (blank lines and '#' comments ignored):
        input <net...>
        output <net...>
        period <value>
        slew <net|*> <value>
        load <net|*> <value>
        activity <net|*> <value>
        gate <inst> <cell> <out> <in...>

    Args:
        text: Netlist source.
        known_cells: When given, every gate cell must be in it.
        name: Netlist name kept for reports.

    Returns:
        GateNetlist with gates in deterministic topological order.

    Raises:
        GateNetlistError: Syntax errors, multiple drivers, undriven nets,
            unknown cells, or a combinational cycle (listed).
    """
    inputs: List[str] = []
    outputs: List[str] = []
    period: Optional[float] = None
    slews: Dict[str, float] = {}
    loads: Dict[str, float] = {}
    activity: Dict[str, float] = {}
    gates: List[Gate] = []

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        keyword, *rest = line.split()
        if keyword == "input":
            inputs.extend(rest)
        elif keyword == "output":
            outputs.extend(rest)
        elif keyword == "period":
            if len(rest) != 1:
                raise GateNetlistError(f"line {number}: period takes one value")
            period = _number(rest[0], number, "period")
        elif keyword in ("slew", "load", "activity"):
            if len(rest) != 2:
                raise GateNetlistError(f"line {number}: {keyword} takes a net (or '*') and a value")
            value = _number(rest[1], number, keyword)
            if keyword == "activity" and not 0 <= value <= 1:
                raise GateNetlistError(f"line {number}: activity must lie in [0, 1], got {value:g}")
            {"slew": slews, "load": loads, "activity": activity}[keyword][rest[0]] = value
        elif keyword == "gate":
            if len(rest) < 4:
                raise GateNetlistError(f"line {number}: gate needs <inst> <cell> <out> <in...>")
            inst, cell, out, *ins = rest
            gates.append(Gate(inst, cell, out, tuple(ins)))
        else:
            raise GateNetlistError(f"line {number}: unknown statement '{keyword}'")

    if period is None or period <= 0:
        raise GateNetlistError("netlist needs a positive 'period'")
    if not outputs:
        raise GateNetlistError("netlist declares no outputs")

    names = [g.name for g in gates]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise GateNetlistError(f"duplicate instance names {duplicates}")
    if known_cells is not None:
        known = set(known_cells)
        unknown = sorted({g.cell for g in gates if g.cell not in known})
        if unknown:
            raise GateNetlistError(f"unknown cells {unknown}")

    driver: Dict[str, str] = {net: "<input>" for net in inputs}
    for gate in gates:
        if gate.output in driver:
            raise GateNetlistError(f"net '{gate.output}' has multiple drivers: {driver[gate.output]}, {gate.name}")
        driver[gate.output] = gate.name
    for gate in gates:
        for net in gate.inputs:
            if net not in driver:
                raise GateNetlistError(f"gate {gate.name}: input net '{net}' has no driver")
    for net in outputs:
        if net not in driver:
            raise GateNetlistError(f"output net '{net}' has no driver")

    ordered = _topological(gates, driver)
    return GateNetlist(ordered, tuple(inputs), tuple(outputs), period, slews, loads, activity, name)


def _topological(gates: Sequence[Gate], driver: Mapping[str, str]) -> List[Gate]:
    graph = nx.DiGraph()
    position = {gate.name: i for i, gate in enumerate(gates)}
    graph.add_nodes_from(position)
    for gate in gates:
        for net in gate.inputs:
            source = driver[net]
            if source != "<input>":
                graph.add_edge(source, gate.name)
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        listing = " -> ".join([u for u, _ in cycle] + [cycle[0][0]])
        raise GateNetlistError(f"combinational cycle: {listing}")
    by_name = {gate.name: gate for gate in gates}
    order = nx.lexicographical_topological_sort(graph, key=lambda n: position[n])
    return [by_name[n] for n in order]


def format_gatelist(netlist: GateNetlist) -> str:
    """Write a netlist back in the gate-list text format."""
    lines = []
    if netlist.inputs:
        lines.append("input " + " ".join(netlist.inputs))
    lines.append("output " + " ".join(netlist.outputs))
    lines.append(f"period {netlist.period:g}")
    for keyword, table in (("slew", netlist.input_slew), ("load", netlist.output_load), ("activity", netlist.activity)):
        for net, value in table.items():
            lines.append(f"{keyword} {net} {value:g}")
    for gate in netlist.gates:
        lines.append(" ".join(["gate", gate.name, gate.cell, gate.output, *gate.inputs]))
    return "\n".join(lines) + "\n"


# --- Timing ----------------------------------------------------------------


@dataclass
class TimingReport:
    """Arrival, slew and worst-arc data of one timing run; times in the library unit."""

    arrival: Dict[str, float]
    slew: Dict[str, float]
    load: Dict[str, float]
    gate_delay: Dict[str, float]
    worst_input: Dict[str, str]
    period: float
    wns: float
    critical_path: List[str]

    @property
    def max_arrival(self) -> float:
        return self.period - self.wns

    def to_frame(self, netlist: GateNetlist) -> pd.DataFrame:
        rows = [
            {
                "gate": g.name,
                "cell": g.cell,
                "output": g.output,
                "arrival": self.arrival[g.output],
                "slew": self.slew[g.output],
                "load": self.load[g.output],
                "delay": self.gate_delay[g.name],
                "critical": g.name in self.critical_path,
            }
            for g in netlist.gates
        ]
        return pd.DataFrame(rows)


def net_loads(netlist: GateNetlist, library: CharLibrary) -> Dict[str, float]:
    """Load on every net: fanout pin capacitance plus the PO load."""
    loads: Dict[str, float] = {}
    for gate in netlist.gates:
        entry = library.cell(gate.cell)
        if len(entry.inputs) != len(gate.inputs):
            raise CoverageError(f"gate {gate.name}: {gate.cell} has {len(entry.inputs)} inputs, got {len(gate.inputs)}")
        for pin, net in zip(entry.inputs, gate.inputs):
            loads[net] = loads.get(net, 0.0) + entry.pin_caps[pin]
    for net in netlist.outputs:
        loads[net] = loads.get(net, 0.0) + netlist.load_of(net)
    return loads


def timing(netlist: GateNetlist, library: CharLibrary) -> TimingReport:
    """
    Longest-path arrival analysis.

    For every gate input the worst output-switching arc of that pin gives
    the candidate arrival; the gate takes the maximum, and its output slew
    is the slew of that maximum-arrival arc.

    Raises:
        CoverageError: If a cell or an input arc is missing from the library.
    """
    loads = net_loads(netlist, library)
    arrival = {net: 0.0 for net in netlist.inputs}
    slew = {net: netlist.slew_of(net) for net in netlist.inputs}
    gate_delay: Dict[str, float] = {}
    worst_input: Dict[str, str] = {}
    for gate in netlist.gates:
        entry = library.cell(gate.cell)
        load = loads.get(gate.output, 0.0)
        best: Optional[Tuple[float, float, float, str]] = None
        for pin, net in zip(entry.inputs, gate.inputs):
            arcs = entry.arcs_for(pin)
            if not arcs:
                raise CoverageError(f"{gate.cell}: no timing arc for pin {pin}")
            s_in = slew[net]
            for arc in arcs:
                for direction in ("rise", "fall"):
                    delay = arc.delay(direction).lookup(s_in, load)
                    candidate = (arrival[net] + delay, delay, arc.transition(direction).lookup(s_in, load), net)
                    if best is None or candidate[0] > best[0]:
                        best = candidate
        arrival[gate.output], gate_delay[gate.name], slew[gate.output], worst_input[gate.name] = best

    worst_po = max(netlist.outputs, key=lambda net: arrival[net])
    wns = netlist.period - arrival[worst_po]
    driver = {g.output: g for g in netlist.gates}
    path: List[str] = []
    net = worst_po
    while net in driver:
        gate = driver[net]
        path.append(gate.name)
        net = worst_input[gate.name]
    path.reverse()
    return TimingReport(arrival, slew, loads, gate_delay, worst_input, netlist.period, wns, path)


# --- Power -----------------------------------------------------------------


@dataclass
class PowerReport:
    """Leakage in nW (state-averaged) and dynamic power in uW."""

    leakage_total: float
    dynamic_total: float
    per_gate: pd.DataFrame

    @property
    def total_uw(self) -> float:
        return self.dynamic_total + self.leakage_total / 1000.0


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def power(netlist: GateNetlist, library: CharLibrary, frequency: float, report: Optional[TimingReport] = None) -> PowerReport:
    """
    Activity-weighted power rollup.

    dynamic = f * sum_gates [a_out * E_flip + sum_inputs a_in * (1 - a_out) * E_nonflip],
    with energies averaged over the matching arcs at the operating slew and
    load. Energies are fJ, so fJ x Hz x 1e-9 gives uW.

    Args:
        netlist: Gate netlist.
        library: Characterized library.
        frequency: Clock frequency in Hz.
        report: Timing report supplying operating slews; computed when omitted.
    """
    if frequency < 0:
        raise ValueError(f"frequency must be non-negative, got {frequency}")
    report = report or timing(netlist, library)
    rows = []
    for gate in netlist.gates:
        entry: CellEntry = library.cell(gate.cell)
        load = report.load.get(gate.output, 0.0)
        a_out = netlist.activity_of(gate.output)
        flip = []
        non_flip_energy = 0.0
        for pin, net in zip(entry.inputs, gate.inputs):
            s_in = report.slew[net]
            for arc in entry.arcs_for(pin):
                flip.append(arc.rise_power.lookup(s_in, load))
                flip.append(arc.fall_power.lookup(s_in, load))
            hidden = [
                value
                for h in entry.hidden_for(pin)
                for value in (h.rise_power.lookup(s_in, load), h.fall_power.lookup(s_in, load))
            ]
            non_flip_energy += netlist.activity_of(net) * (1.0 - a_out) * _mean(hidden)
        energy = a_out * _mean(flip) + non_flip_energy
        rows.append(
            {
                "gate": gate.name,
                "cell": gate.cell,
                "leakage_nw": entry.leakage_average,
                "dynamic_uw": energy * frequency * 1e-9,
            }
        )
    per_gate = pd.DataFrame(rows, columns=["gate", "cell", "leakage_nw", "dynamic_uw"])
    return PowerReport(float(per_gate["leakage_nw"].sum()), float(per_gate["dynamic_uw"].sum()), per_gate)


def clock_frequency(period: float, library: CharLibrary) -> float:
    """Clock frequency in Hz for a period given in the library time unit."""
    return 1.0 / (period * _SECONDS_PER_UNIT[library.time_unit])


def netlist_area(netlist: GateNetlist, library: CharLibrary) -> float:
    return sum(library.cell(g.cell).area for g in netlist.gates)


# --- Sizing ----------------------------------------------------------------


def ppa_improvement(origin: Tuple[float, float], new: Tuple[float, float]) -> float:
    """
    Combined area and power improvement in percent.

    (1 - area_new / area_origin + 1 - power_new / power_origin) * 100.

    Raises:
        ValueError: If the origin area or power is not positive.
    """
    area_origin, power_origin = origin
    area_new, power_new = new
    if area_origin <= 0 or power_origin <= 0:
        raise ValueError("origin area and power must be positive")
    return (1.0 - area_new / area_origin + 1.0 - power_new / power_origin) * 100.0


def drive_variants(library: CharLibrary) -> Dict[str, List[Tuple[int, str]]]:
    """Base function -> [(drive, cell name)] sorted by drive."""
    variants: Dict[str, List[Tuple[int, str]]] = {}
    for name in library.cells:
        match = _DRIVE.match(name)
        if match:
            variants.setdefault(match.group("base"), []).append((int(match.group("drive")), name))
    return {base: sorted(items) for base, items in variants.items()}


def _step(variants: Mapping[str, List[Tuple[int, str]]], cell: str, direction: int) -> Optional[str]:
    match = _DRIVE.match(cell)
    if not match:
        return None
    family = variants.get(match.group("base"), [])
    names = [name for _, name in family]
    if cell not in names:
        return None
    index = names.index(cell) + direction
    return names[index] if 0 <= index < len(names) else None


@dataclass
class SizingResult:
    """Outcome of greedy sizing; power is total uW at the sizing frequency."""

    assignment: Dict[str, str]
    area_before: float
    area_after: float
    power_before: float
    power_after: float
    wns_before: float
    wns_after: float
    met: bool
    upsizes: int = 0
    downsizes: int = 0

    def ppa_versus(self, origin: "SizingResult") -> float:
        return ppa_improvement((origin.area_after, origin.power_after), (self.area_after, self.power_after))


def _evaluate(netlist: GateNetlist, library: CharLibrary, frequency: float) -> Tuple[TimingReport, float, float]:
    report = timing(netlist, library)
    total = power(netlist, library, frequency, report).total_uw
    return report, netlist_area(netlist, library), total


def _upsize(current: GateNetlist, library: CharLibrary, variants) -> Tuple[GateNetlist, TimingReport, int]:
    """Phase 1: upsize critical-path gates while WNS < 0 and some move improves it."""
    report = timing(current, library)
    moves = 0
    while report.wns < 0:
        best = None
        cells = current.cells()
        for name in report.critical_path:
            bigger = _step(variants, cells[name], +1)
            if bigger is None:
                continue
            trial = current.with_cells({name: bigger})
            trial_report = timing(trial, library)
            gain = trial_report.wns - report.wns
            if gain <= 0:
                continue
            added = library.cell(bigger).area - library.cell(cells[name]).area
            score = gain / added if added > 0 else float("inf")
            if best is None or score > best[0]:
                best = (score, trial, trial_report)
        if best is None:
            break
        _, current, report = best
        moves += 1
        logger.debug("Upsize %d: WNS %.4g", moves, report.wns)
    return current, report, moves


def size_gates(
    netlist: GateNetlist,
    library: CharLibrary,
    period: Optional[float] = None,
    frequency: Optional[float] = None,
) -> SizingResult:
    """
    Greedy drive-strength selection under a clock period.

    Phase 1 upsizes, one drive step at a time, the critical-path gate with
    the best WNS gain per unit of added area until timing is met or no move
    helps. Phase 2 then downsizes one step at a time whichever gate recovers
    the most normalized area plus power while WNS stays non-negative, with
    ties going to the smaller instance name. The result is greedy, not
    optimal.

    Args:
        netlist: Netlist; gates may start at any drive in the library.
        library: Library holding the drive variants to choose from.
        period: Clock period (library time unit); the netlist's when omitted.
        frequency: Hz for power; 1 / period when omitted.

    Returns:
        SizingResult; `met` is False when timing stayed negative.
    """
    period = period if period is not None else netlist.period
    if period <= 0:
        raise ValueError(f"period must be positive, got {period}")
    frequency = frequency if frequency is not None else clock_frequency(period, library)
    variants = drive_variants(library)
    current = replace(netlist, period=period)
    report, area, total = _evaluate(current, library, frequency)
    before = (area, total, report.wns)
    current, report, upsizes = _upsize(current, library, variants)
    downsizes = 0
    met = report.wns >= 0
    if not met:
        logger.warning("Timing not met for %s: WNS %.4g after %d upsizes", netlist.name or "netlist", report.wns, upsizes)

    if met:
        report, area, total = _evaluate(current, library, frequency)
        while True:
            best = None
            for name in sorted(current.cells()):
                smaller = _step(variants, current.cells()[name], -1)
                if smaller is None:
                    continue
                trial = current.with_cells({name: smaller})
                trial_report, trial_area, trial_total = _evaluate(trial, library, frequency)
                if trial_report.wns < 0:
                    continue
                score = (area - trial_area) / area + (total - trial_total) / total
                if score <= 0:
                    continue
                if best is None or score > best[0]:
                    best = (score, trial, trial_report, trial_area, trial_total)
            if best is None:
                break
            _, current, report, area, total = best
            downsizes += 1

    report, area, total = _evaluate(current, library, frequency)
    return SizingResult(
        assignment=current.cells(),
        area_before=before[0],
        area_after=area,
        power_before=before[1],
        power_after=total,
        wns_before=before[2],
        wns_after=report.wns,
        met=report.wns >= 0,
        upsizes=upsizes,
        downsizes=downsizes,
    )


def minimum_period(netlist: GateNetlist, library: CharLibrary) -> float:
    """
    Estimate the fastest feasible clock period.

    Runs the upsizing phase against an unmeetable period and returns the
    largest primary-output arrival it ends with.
    """
    tight = replace(netlist, period=float(np.finfo(float).tiny))
    _, report, _ = _upsize(tight, library, drive_variants(library))
    return report.max_arrival


@dataclass
class LibraryComparison:
    wns_truth: float
    wns_pred: float
    leakage_truth: float
    leakage_pred: float
    dynamic_truth: float
    dynamic_pred: float

    @property
    def wns_delta(self) -> float:
        return abs(self.wns_pred - self.wns_truth)

    @staticmethod
    def _percent(pred: float, truth: float) -> float:
        if truth == 0:
            return 0.0 if pred == 0 else float("inf")
        return abs(pred - truth) / abs(truth) * 100.0

    @property
    def leakage_error(self) -> float:
        return self._percent(self.leakage_pred, self.leakage_truth)

    @property
    def dynamic_error(self) -> float:
        return self._percent(self.dynamic_pred, self.dynamic_truth)

    def as_row(self) -> Dict[str, float]:
        return {
            "wns_truth": self.wns_truth,
            "wns_pred": self.wns_pred,
            "wns_abs_error": self.wns_delta,
            "leakage_truth_nw": self.leakage_truth,
            "leakage_pred_nw": self.leakage_pred,
            "leakage_pct_error": self.leakage_error,
            "dynamic_truth_uw": self.dynamic_truth,
            "dynamic_pred_uw": self.dynamic_pred,
            "dynamic_pct_error": self.dynamic_error,
        }


def compare_libraries(
    netlist: GateNetlist, lib_truth: CharLibrary, lib_pred: CharLibrary, frequency: float
) -> LibraryComparison:
    """
    Timing and power of one netlist under two libraries, without re-sizing.

    Raises:
        CoverageError: If the libraries cover different cells.
    """
    if set(lib_truth.cells) != set(lib_pred.cells):
        diff = sorted(set(lib_truth.cells) ^ set(lib_pred.cells))
        raise CoverageError(f"libraries cover different cells: {diff}")
    truth_t = timing(netlist, lib_truth)
    pred_t = timing(netlist, lib_pred)
    truth_p = power(netlist, lib_truth, frequency, truth_t)
    pred_p = power(netlist, lib_pred, frequency, pred_t)
    return LibraryComparison(
        truth_t.wns, pred_t.wns, truth_p.leakage_total, pred_p.leakage_total, truth_p.dynamic_total, pred_p.dynamic_total
    )
