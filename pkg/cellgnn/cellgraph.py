# ABOUTME: Encodes a cell netlist plus corner and stimulus into a directed graph with node features.
# ABOUTME: Supports the delay/power, leakage, and capacitance feature layouts and the GCN propagation operator.

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from cellgnn.netlist import CellNetlist, Polarity
from cellgnn.technology import Corner


class NodeKind(IntEnum):
    """Node types with their 3-bit codes."""

    IN = 0b001
    OUT = 0b010
    FET = 0b011
    VDD = 0b100
    VSS = 0b101

    @property
    def bits(self) -> Tuple[int, int, int]:
        return ((self.value >> 2) & 1, (self.value >> 1) & 1, self.value & 1)

    @classmethod
    def from_bits(cls, bits: Sequence[float]) -> "NodeKind":
        code = (int(round(bits[0])) << 2) | (int(round(bits[1])) << 1) | int(round(bits[2]))
        return cls(code)


class FeatureLayout(Enum):
    """Per-task node feature layouts; the value is (name, width, file id)."""

    DELAY_POWER = ("delay_power", 12, 0)
    LEAKAGE = ("leakage", 9, 1)
    CAPACITANCE = ("capacitance", 9, 2)

    @property
    def width(self) -> int:
        return self.value[1]

    @property
    def file_id(self) -> int:
        return self.value[2]

    @classmethod
    def from_file_id(cls, file_id: int) -> "FeatureLayout":
        for layout in cls:
            if layout.file_id == file_id:
                return layout
        raise ValueError(f"unknown layout id {file_id}")


# Feature positions shared by every layout.
TYPE_BITS = slice(0, 3)
POLAR = 3
VDD_LEVEL = 4
WIDTH = 5
THIRD_AXIS = 6  # temperature (silicon) or Cox (flexible)
VTH = 7
# Delay/power layout.
INPUT_SLEW = 8
OUTPUT_LOAD = 9
CURRENT_STATE = 10
NEXT_STATE = 11
# Leakage and capacitance layouts reuse position 8.
LEAKAGE_STATE = 8
PIN_IS_CHOSEN = 8


@dataclass(frozen=True)
class DelayStimulus:
    """Input transition for delay and power samples; states are 0/1 per input pin."""

    slew: float
    load: float
    current: Tuple[int, ...]
    next: Tuple[int, ...]


@dataclass(frozen=True)
class LeakageStimulus:
    state: Tuple[int, ...]


@dataclass(frozen=True)
class CapacitanceStimulus:
    pin: str


Stimulus = Union[DelayStimulus, LeakageStimulus, CapacitanceStimulus]

_STIMULUS_LAYOUT = {
    DelayStimulus: FeatureLayout.DELAY_POWER,
    LeakageStimulus: FeatureLayout.LEAKAGE,
    CapacitanceStimulus: FeatureLayout.CAPACITANCE,
}


@dataclass(frozen=True)
class GraphMeta:
    cell: str
    corner: Optional[Corner] = None
    arc: str = ""


@dataclass(frozen=True, eq=False)
class CellGraph:
    """
    Directed cell graph.

    Attributes:
        kinds: Node kind per node.
        features: (nodes x layout width) raw feature matrix.
        edges: (edges x 2) array of (src, dst) node indices.
        layout: Feature layout of `features`.
        target: Optional training label.
        meta: Cell name, corner and arc description.
    """

    kinds: Tuple[NodeKind, ...]
    features: np.ndarray
    edges: np.ndarray
    layout: FeatureLayout
    target: Optional[float] = None
    meta: GraphMeta = field(default_factory=lambda: GraphMeta(cell=""))

    @property
    def num_nodes(self) -> int:
        return len(self.kinds)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def with_target(self, target: Optional[float]) -> "CellGraph":
        return replace(self, target=target)

    def with_features(self, features: np.ndarray) -> "CellGraph":
        return replace(self, features=features)

    @cached_property
    def adjacency_entries(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sparse (rows, cols, values) of the normalized propagation operator."""
        n = self.num_nodes
        rows = np.concatenate([self.edges[:, 1], np.arange(n)]).astype(np.int64)
        cols = np.concatenate([self.edges[:, 0], np.arange(n)]).astype(np.int64)
        in_degree = np.bincount(rows, minlength=n).astype(np.float64)
        values = 1.0 / in_degree[rows]
        return rows, cols, values


def encode(
    cell: CellNetlist,
    corner: Corner,
    stimulus: Stimulus,
    layout: Optional[FeatureLayout] = None,
    arc: str = "",
) -> CellGraph:
    """
    Build the directed graph of a cell at one corner and stimulus.

    Node order is IN nodes (pin order), OUT, one FET node per transistor
    (netlist order), VDD, VSS. IN and VDD nodes only source edges, OUT only
    sinks them, FET gate/source edges are incoming and drain edges outgoing.
    VSS feeds the FETs whose source sits on it, and internal nets collapse to
    direct FET->FET edges from the driving drain to the source or gate.

    Args:
        cell: Cell to encode.
        corner: Technology point (Vdd, Vth, temperature or Cox).
        stimulus: DelayStimulus, LeakageStimulus or CapacitanceStimulus.
        layout: Expected layout; inferred from the stimulus when omitted.
        arc: Free-text arc description stored in the metadata.

    Returns:
        CellGraph with raw (unnormalized) features.

    Raises:
        ValueError: On stimulus/layout mismatch or a cell with >3 inputs.
    """
    inferred = _STIMULUS_LAYOUT.get(type(stimulus))
    if inferred is None or (layout is not None and layout is not inferred):
        raise ValueError(
            f"stimulus {type(stimulus).__name__} does not match layout "
            f"{layout.name if layout else None}"
        )
    layout = inferred
    k = len(cell.inputs)
    if k > 3:
        raise ValueError(f"{cell.name}: cells with more than 3 inputs are not supported")
    _check_stimulus(cell, stimulus)

    out_idx = k
    fet_base = k + 1
    vdd_idx = fet_base + len(cell.fets)
    vss_idx = vdd_idx + 1
    kinds = [NodeKind.IN] * k + [NodeKind.OUT] + [NodeKind.FET] * len(cell.fets) + [NodeKind.VDD, NodeKind.VSS]
    features = np.zeros((len(kinds), layout.width), dtype=np.float64)
    for i, kind in enumerate(kinds):
        features[i, TYPE_BITS] = kind.bits

    in_idx = {pin: i for i, pin in enumerate(cell.inputs)}
    drivers: Dict[str, List[int]] = {}
    for j, fet in enumerate(cell.fets):
        drivers.setdefault(fet.drain, []).append(fet_base + j)

    edges: List[Tuple[int, int]] = []
    seen = set()

    def add(src: int, dst: int) -> None:
        if src != dst and (src, dst) not in seen:
            seen.add((src, dst))
            edges.append((src, dst))

    rails = {cell.vdd: vdd_idx, cell.vss: vss_idx}
    for j, fet in enumerate(cell.fets):
        node = fet_base + j
        if fet.gate in in_idx:
            add(in_idx[fet.gate], node)
        else:
            for src in drivers.get(fet.gate, []):
                add(src, node)
        for terminal, net in (("drain", fet.drain), ("source", fet.source)):
            if net == cell.output:
                add(node, out_idx)
            elif net in rails:
                add(rails[net], node)
            elif net in in_idx:
                add(in_idx[net], node)
            elif terminal == "source":
                for src in drivers.get(net, []):
                    add(src, node)

        features[node, POLAR] = 1.0 if fet.polarity is Polarity.P else -1.0
        features[node, WIDTH] = fet.width
        features[node, THIRD_AXIS] = corner.third
        features[node, VTH] = -corner.vth if fet.polarity is Polarity.P else corner.vth

    features[vdd_idx, VDD_LEVEL] = corner.vdd
    _fill_pin_features(cell, stimulus, features, out_idx)

    return CellGraph(
        kinds=tuple(kinds),
        features=features,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        layout=layout,
        meta=GraphMeta(cell=cell.name, corner=corner, arc=arc),
    )


def _check_stimulus(cell: CellNetlist, stimulus: Stimulus) -> None:
    k = len(cell.inputs)
    if isinstance(stimulus, DelayStimulus):
        if len(stimulus.current) != k or len(stimulus.next) != k:
            raise ValueError(f"{cell.name}: delay stimulus needs {k} current and next states")
    elif isinstance(stimulus, LeakageStimulus):
        if len(stimulus.state) != k:
            raise ValueError(f"{cell.name}: leakage stimulus needs {k} states")
    elif stimulus.pin not in cell.inputs:
        raise ValueError(f"{cell.name}: '{stimulus.pin}' is not an input pin")


def _level(bit: int) -> float:
    return 1.0 if bit else -1.0


def _fill_pin_features(cell: CellNetlist, stimulus: Stimulus, features: np.ndarray, out_idx: int) -> None:
    for i, pin in enumerate(cell.inputs):
        if isinstance(stimulus, DelayStimulus):
            features[i, INPUT_SLEW] = stimulus.slew
            features[i, CURRENT_STATE] = _level(stimulus.current[i])
            features[i, NEXT_STATE] = _level(stimulus.next[i])
        elif isinstance(stimulus, LeakageStimulus):
            features[i, LEAKAGE_STATE] = _level(stimulus.state[i])
        else:
            features[i, PIN_IS_CHOSEN] = 1.0 if pin == stimulus.pin else 0.0
    if isinstance(stimulus, DelayStimulus):
        features[out_idx, OUTPUT_LOAD] = stimulus.load


def adjacency(graph: CellGraph) -> np.ndarray:
    """
    Dense propagation operator D_in^-1 (A + I).

    A[dst, src] = 1 for every edge src->dst, so row i averages node i with
    its in-neighbours; every row sums to one.
    """
    rows, cols, values = graph.adjacency_entries
    matrix = np.zeros((graph.num_nodes, graph.num_nodes), dtype=np.float64)
    np.add.at(matrix, (rows, cols), values)
    return matrix


def permute_nodes(graph: CellGraph, order: Sequence[int]) -> CellGraph:
    """Reorder nodes so new node i is old node order[i]; edges are relabelled."""
    order = np.asarray(order, dtype=np.int64)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(len(order))
    return replace(
        graph,
        kinds=tuple(graph.kinds[i] for i in order),
        features=graph.features[order].copy(),
        edges=inverse[graph.edges] if len(graph.edges) else graph.edges.copy(),
    )


def dump_graph(graph: CellGraph) -> str:
    """Plain-text edge-list form used for golden-file comparisons."""
    lines = []
    for i, (kind, row) in enumerate(zip(graph.kinds, graph.features)):
        values = " ".join(f"{v:.6g}" for v in row)
        lines.append(f"node {i} {kind.name} {values}")
    for src, dst in graph.edges:
        lines.append(f"edge {src} {dst}")
    return "\n".join(lines) + "\n"
