# ABOUTME: Corner and stimulus grids, oracle-labelled per-task graph samples, and min-max feature normalization.
# ABOUTME: Persists datasets as a versioned binary record stream and exports flattened CSVs with pandas.

import hashlib
import io
import itertools
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cellgnn.cellgraph import (
    CapacitanceStimulus,
    CellGraph,
    DelayStimulus,
    FeatureLayout,
    GraphMeta,
    LeakageStimulus,
    NodeKind,
    encode,
)
from cellgnn.errors import ConfigError, DataError, DatasetFormatError
from cellgnn.netlist import CellCatalog
from cellgnn.oracle import SurrogateParams, characterize, default_params, enumerate_arcs, leakage_power, pin_capacitance
from cellgnn.technology import Corner, Technology, ranges_for

logger = logging.getLogger(__name__)


class Task(str, Enum):
    """Prediction tasks; each trains its own model."""

    DELAY = "delay"
    CAPACITANCE = "capacitance"
    FLIP_POWER = "flip_power"
    NON_FLIP_POWER = "non_flip_power"
    LEAKAGE = "leakage"

    @property
    def layout(self) -> FeatureLayout:
        if self is Task.LEAKAGE:
            return FeatureLayout.LEAKAGE
        if self is Task.CAPACITANCE:
            return FeatureLayout.CAPACITANCE
        return FeatureLayout.DELAY_POWER

    @property
    def file_id(self) -> int:
        return list(Task).index(self)

    @property
    def unit(self) -> str:
        return {"delay": "time", "capacitance": "fF", "leakage": "nW"}.get(self.value, "fJ")

    @classmethod
    def from_file_id(cls, file_id: int) -> "Task":
        try:
            return list(cls)[file_id]
        except IndexError:
            raise DatasetFormatError(f"unknown task id {file_id}")

    @classmethod
    def parse(cls, value: "str | Task") -> "Task":
        if isinstance(value, Task):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            known = ", ".join(t.value for t in cls)
            raise ConfigError(f"unknown task '{value}' (expected one of: {known})")


ALL_TASKS = tuple(Task)


def corner_grid(technology: "str | Technology", points_per_axis: int) -> List[Corner]:
    """
    Equally spaced corners over the technology's Vdd, Vth and third axis.

    Endpoints are inclusive and the product runs Vdd-major, then Vth, then
    temperature (or Cox).

    Args:
        technology: Technology tag.
        points_per_axis: Values per axis (>= 2).

    Returns:
        points_per_axis**3 corners.
    """
    if points_per_axis < 2:
        raise ValueError(f"points_per_axis must be at least 2, got {points_per_axis}")
    tech = Technology.parse(technology)
    ranges = ranges_for(tech)
    axes = [equal_spacing(low, high, points_per_axis) for low, high in (ranges.vdd, ranges.vth, ranges.third_axis)]
    return [Corner(tech, vdd, vth, third) for vdd, vth, third in itertools.product(*axes)]


def equal_spacing(low: float, high: float, count: int) -> List[float]:
    return [float(v) for v in np.round(np.linspace(low, high, count), 12)]


def stimulus_grid(technology: "str | Technology", n_slew: int, n_load: int) -> List[Tuple[float, float]]:
    """(slew, load) pairs over the technology's slew and load ranges, slew-major."""
    if n_slew < 2 or n_load < 2:
        raise ValueError(f"n_slew and n_load must be at least 2, got {n_slew} and {n_load}")
    ranges = ranges_for(technology)
    slews = equal_spacing(*ranges.slew, n_slew)
    loads = equal_spacing(*ranges.load, n_load)
    return list(itertools.product(slews, loads))


@dataclass(frozen=True)
class Provenance:
    """Where a sample came from; enough to re-encode its graph."""

    cell: str
    corner: Corner
    arc: str = ""
    slew: Optional[float] = None
    load: Optional[float] = None
    current: Tuple[int, ...] = ()
    next: Tuple[int, ...] = ()
    pin: str = ""

    def stimulus(self, task: Task):
        if task.layout is FeatureLayout.DELAY_POWER:
            return DelayStimulus(self.slew, self.load, self.current, self.next)
        if task is Task.LEAKAGE:
            return LeakageStimulus(self.current)
        return CapacitanceStimulus(self.pin)

    def describe(self) -> str:
        parts = [f"cell={self.cell}", f"corner={self.corner.label()}"]
        if self.arc:
            parts.append(f"arc={self.arc}")
        if self.slew is not None:
            parts.append(f"slew={self.slew:g}")
        if self.load is not None:
            parts.append(f"load={self.load:g}")
        return ", ".join(parts)

    def to_json(self) -> str:
        corner = self.corner
        return json.dumps(
            {
                "cell": self.cell,
                "corner": [corner.technology.value, corner.vdd, corner.vth, corner.third],
                "arc": self.arc,
                "slew": self.slew,
                "load": self.load,
                "current": list(self.current),
                "next": list(self.next),
                "pin": self.pin,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Provenance":
        data = json.loads(text)
        tech, vdd, vth, third = data["corner"]
        return cls(
            cell=data["cell"],
            corner=Corner(Technology.parse(tech), vdd, vth, third),
            arc=data["arc"],
            slew=data["slew"],
            load=data["load"],
            current=tuple(data["current"]),
            next=tuple(data["next"]),
            pin=data["pin"],
        )


@dataclass(frozen=True)
class Sample:
    """One labelled graph; the target is also carried on graph.target."""

    graph: CellGraph
    target: float
    task: Task
    provenance: Provenance


def build_dataset(
    catalog: CellCatalog,
    corners: Sequence[Corner],
    stimulus: Sequence[Tuple[float, float]],
    tasks: Iterable["str | Task"],
    params: Optional[SurrogateParams] = None,
    jobs: int = 1,
    include_degenerate: bool = False,
) -> Dict[Task, List[Sample]]:
    """
    Label every (cell, arc, corner, slew, load) point with the oracle.

    Delay and flip_power get one sample per flip arc and stimulus point,
    non_flip_power one per static arc and stimulus point, leakage one per
    input state and capacitance one per input pin (no slew or load).
    Ordering is corner, cell, arc, slew, load.

    Args:
        catalog: Cells to characterize.
        corners: Corner list.
        stimulus: (slew, load) pairs.
        tasks: Tasks to build.
        params: Oracle constants; the catalog technology preset by default.
        jobs: Worker processes, one corner per work item.
        include_degenerate: Keep points where the oracle floored conductance.

    Returns:
        Task -> samples.

    Raises:
        DataError: Oracle failures, with the sample provenance appended.
    """
    task_list = [Task.parse(t) for t in tasks]
    if not task_list:
        raise ConfigError("task list is empty")
    if not len(catalog) or not corners:
        raise ValueError("build_dataset needs at least one cell and one corner")
    needs_stimulus = any(t.layout is FeatureLayout.DELAY_POWER for t in task_list)
    if needs_stimulus and not stimulus:
        raise ValueError("delay and power tasks need a non-empty stimulus grid")
    params = params or default_params(catalog.technology)
    cells = tuple(catalog)
    work = [(cells, corner, tuple(stimulus), tuple(task_list), params, include_degenerate) for corner in corners]

    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_corner_samples, work))
    else:
        parts = [_corner_samples(item) for item in work]

    result: Dict[Task, List[Sample]] = {task: [] for task in task_list}
    skipped = 0
    for samples, dropped in parts:
        skipped += dropped
        for task in task_list:
            result[task].extend(samples[task])
    if skipped:
        logger.warning("Excluded %d degenerate or non-positive points", skipped)
    for task in task_list:
        logger.info("Built %d %s samples over %d corners", len(result[task]), task.value, len(corners))
    return result


def _corner_samples(item) -> Tuple[Dict[Task, List[Sample]], int]:
    cells, corner, stimulus, tasks, params, include_degenerate = item
    samples: Dict[Task, List[Sample]] = {task: [] for task in tasks}
    dropped = 0

    def keep(task: Task, graph: CellGraph, target: Optional[float], prov: Provenance, degenerate: bool) -> None:
        nonlocal dropped
        if target is None:
            return
        if (degenerate and not include_degenerate) or not target > 0:
            dropped += 1
            return
        samples[task].append(Sample(graph.with_target(target), float(target), task, prov))

    for cell in cells:
        arcs = enumerate_arcs(cell) if any(t.layout is FeatureLayout.DELAY_POWER for t in tasks) else []
        for arc in arcs:
            wanted = [t for t in tasks if t.layout is FeatureLayout.DELAY_POWER]
            wanted = [t for t in wanted if (t is Task.NON_FLIP_POWER) != arc.output_flips]
            if not wanted:
                continue
            for slew, load in stimulus:
                prov = Provenance(cell.name, corner, arc.label(), slew, load, arc.before, arc.after)
                try:
                    graph = encode(cell, corner, prov.stimulus(Task.DELAY), arc=arc.label())
                    point = characterize(cell, arc, corner, slew, load, params)
                except (DataError, ValueError, ArithmeticError) as exc:
                    raise DataError(f"{exc} ({prov.describe()})") from exc
                for task in wanted:
                    target = {
                        Task.DELAY: point.delay,
                        Task.FLIP_POWER: point.flip_energy,
                        Task.NON_FLIP_POWER: point.non_flip_energy,
                    }[task]
                    keep(task, graph, target, prov, point.degenerate)

        degenerate = corner.vdd <= abs(corner.vth)
        if Task.LEAKAGE in tasks:
            for state in itertools.product((0, 1), repeat=len(cell.inputs)):
                prov = Provenance(cell.name, corner, current=state)
                try:
                    graph = encode(cell, corner, LeakageStimulus(state))
                    target = leakage_power(cell, state, corner, params)
                except (DataError, ValueError, ArithmeticError) as exc:
                    raise DataError(f"{exc} ({prov.describe()})") from exc
                keep(Task.LEAKAGE, graph, target, prov, degenerate)
        if Task.CAPACITANCE in tasks:
            for pin in cell.inputs:
                prov = Provenance(cell.name, corner, pin=pin)
                graph = encode(cell, corner, CapacitanceStimulus(pin))
                keep(Task.CAPACITANCE, graph, pin_capacitance(cell, pin, corner, params), prov, degenerate)
    return samples, dropped


def reencode(sample: Sample, catalog: CellCatalog) -> CellGraph:
    """Rebuild a sample's graph from its provenance."""
    prov = sample.provenance
    cell = catalog[prov.cell]
    return encode(cell, prov.corner, prov.stimulus(sample.task), arc=prov.arc).with_target(sample.target)


@dataclass(frozen=True)
class NormalizationSpec:
    """
    Per-feature (min, max) over every node of a training set.

    Features whose max equals their min pass through unchanged; values
    outside the training range map outside [0, 1] without clamping.
    """

    layout: FeatureLayout
    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def varying(self) -> np.ndarray:
        return self.maximum > self.minimum

    def normalize(self, features: np.ndarray) -> np.ndarray:
        if features.shape[1] != self.layout.width:
            raise ValueError(f"expected {self.layout.width} features, got {features.shape[1]}")
        out = features.astype(np.float64, copy=True)
        mask = self.varying
        span = self.maximum[mask] - self.minimum[mask]
        out[:, mask] = (features[:, mask] - self.minimum[mask]) / span
        return out

    def apply_graph(self, graph: CellGraph) -> CellGraph:
        if graph.layout is not self.layout:
            raise ValueError(f"graph layout {graph.layout.name} does not match {self.layout.name}")
        return graph.with_features(self.normalize(graph.features))

    def apply(self, sample: Sample) -> Sample:
        return replace(sample, graph=self.apply_graph(sample.graph))


def fit_normalization(train: Sequence[Sample]) -> NormalizationSpec:
    """Fit min-max statistics over all nodes of all training graphs."""
    if not train:
        raise ValueError("cannot fit normalization on an empty training set")
    layouts = {s.graph.layout for s in train}
    if len(layouts) != 1:
        raise ValueError(f"training samples mix layouts: {sorted(l.name for l in layouts)}")
    stacked = np.vstack([s.graph.features for s in train])
    return NormalizationSpec(layouts.pop(), stacked.min(axis=0), stacked.max(axis=0))


def apply(spec: NormalizationSpec, sample: Sample) -> Sample:
    return spec.apply(sample)


def split_held_out_cells(samples: Sequence[Sample], held_out: Iterable[str]) -> Tuple[List[Sample], List[Sample]]:
    """Split samples into (seen cells, held-out cells)."""
    names = set(held_out)
    kept = [s for s in samples if s.provenance.cell not in names]
    held = [s for s in samples if s.provenance.cell in names]
    return kept, held


# --- Persistence -----------------------------------------------------------

MAGIC = b"CGDS"
VERSION = 1
_HEADER = struct.Struct("<4sHHHHQ")
_RECORD = struct.Struct("<II")


def write_samples(stream: BinaryIO, task: Task, samples: Sequence[Sample]) -> None:
    layout = task.layout
    stream.write(_HEADER.pack(MAGIC, VERSION, layout.file_id, task.file_id, layout.width, len(samples)))
    for sample in samples:
        graph = sample.graph
        if graph.layout is not layout:
            raise ValueError(f"sample layout {graph.layout.name} does not match task {task.value}")
        stream.write(_RECORD.pack(graph.num_nodes, graph.num_edges))
        stream.write(np.ascontiguousarray(graph.features, dtype="<f8").tobytes())
        stream.write(np.ascontiguousarray(graph.edges, dtype="<i4").tobytes())
        stream.write(struct.pack("<d", sample.target))
        text = sample.provenance.to_json().encode("utf-8")
        stream.write(struct.pack("<I", len(text)))
        stream.write(text)


def write_dataset(path: "str | Path", task: "str | Task", samples: Sequence[Sample]) -> Path:
    """
    Write one task's samples as a binary record stream.

    The header is magic, version, layout id, task id, feature width and
    sample count; each record holds node and edge counts, float64 node
    features, int32 edges, the float64 target and a JSON provenance string.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        write_samples(handle, Task.parse(task), samples)
    return path


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise DatasetFormatError(f"truncated dataset while reading {what}")
    return data


def read_samples(stream: BinaryIO) -> Tuple[Task, List[Sample]]:
    magic, version, layout_id, task_id, width, count = _HEADER.unpack(_read_exact(stream, _HEADER.size, "header"))
    if magic != MAGIC:
        raise DatasetFormatError(f"not a dataset file (magic {magic!r})")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    task = Task.from_file_id(task_id)
    layout = FeatureLayout.from_file_id(layout_id)
    if layout is not task.layout or width != layout.width:
        raise DatasetFormatError(f"header layout {layout.name}/{width} does not match task {task.value}")

    samples = []
    for index in range(count):
        nodes, n_edges = _RECORD.unpack(_read_exact(stream, _RECORD.size, f"record {index}"))
        features = np.frombuffer(_read_exact(stream, nodes * width * 8, "features"), dtype="<f8")
        features = features.reshape(nodes, width).astype(np.float64)
        edges = np.frombuffer(_read_exact(stream, n_edges * 8, "edges"), dtype="<i4")
        edges = edges.reshape(n_edges, 2).astype(np.int64)
        (target,) = struct.unpack("<d", _read_exact(stream, 8, "target"))
        (length,) = struct.unpack("<I", _read_exact(stream, 4, "provenance length"))
        prov = Provenance.from_json(_read_exact(stream, length, "provenance").decode("utf-8"))
        kinds = tuple(NodeKind.from_bits(row[:3]) for row in features)
        graph = CellGraph(
            kinds=kinds,
            features=features,
            edges=edges,
            layout=layout,
            target=target,
            meta=GraphMeta(prov.cell, prov.corner, prov.arc),
        )
        samples.append(Sample(graph, target, task, prov))
    if stream.read(1):
        raise DatasetFormatError("trailing bytes after the last record")
    return task, samples


def read_dataset(path: "str | Path") -> Tuple[Task, List[Sample]]:
    """Load a file written by write_dataset."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, "rb") as handle:
        return read_samples(handle)


def dataset_hash(task: "str | Task", samples: Sequence[Sample]) -> str:
    """SHA-256 of the binary serialization."""
    buffer = io.BytesIO()
    write_samples(buffer, Task.parse(task), samples)
    return hashlib.sha256(buffer.getvalue()).hexdigest()


def samples_to_frame(samples: Sequence[Sample]) -> pd.DataFrame:
    """One row per sample with provenance columns and node features flattened as n<i>_f<j>."""
    rows = []
    for sample in samples:
        prov = sample.provenance
        row = {
            "task": sample.task.value,
            "cell": prov.cell,
            "arc": prov.arc or prov.pin or "".join(str(b) for b in prov.current),
            "vdd": prov.corner.vdd,
            "vth": prov.corner.vth,
            "third_axis": prov.corner.third,
            "slew": prov.slew,
            "load": prov.load,
            "target": sample.target,
        }
        for i, node in enumerate(sample.graph.features):
            for j, value in enumerate(node):
                row[f"n{i}_f{j}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def export_csv(samples: Sequence[Sample], path: "str | Path") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples_to_frame(samples).to_csv(path, index=False)
    return path
