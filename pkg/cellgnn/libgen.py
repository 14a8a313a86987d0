# ABOUTME: Characterized cell libraries built from the oracle or from trained models over a slew x load grid.
# ABOUTME: Holds NLDM tables with clamped bilinear lookup and the MAPE / RMSPE / R2 comparison metrics.

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cellgnn.cellgraph import CapacitanceStimulus, DelayStimulus, LeakageStimulus, encode
from cellgnn.dataset import Task, equal_spacing
from cellgnn.errors import CoverageError
from cellgnn.gnn import Checkpoint, predict_batch
from cellgnn.netlist import CellCatalog, CellNetlist
from cellgnn.oracle import (
    Arc,
    SurrogateParams,
    boolean_function,
    characterize,
    default_params,
    enumerate_arcs,
    leakage_power,
    pin_capacitance,
)
from cellgnn.technology import Corner, Technology, ranges_for

logger = logging.getLogger(__name__)

# Layout area per unit of transistor width, um^2.
AREA_PER_WIDTH = 0.1

Side = Tuple[Tuple[str, int], ...]


@dataclass(frozen=True, eq=False)
class NldmTable:
    """
    Two-dimensional lookup table, rows over input slew and columns over load.

    Queries outside the grid are clamped to the nearest breakpoint.
    """

    index_1: Tuple[float, ...]
    index_2: Tuple[float, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        for name, index in (("index_1", self.index_1), ("index_2", self.index_2)):
            if len(index) < 2 or any(b <= a for a, b in zip(index, index[1:])):
                raise ValueError(f"{name} must hold at least two strictly increasing breakpoints")
        if values.shape != (len(self.index_1), len(self.index_2)):
            raise ValueError(f"table shape {values.shape} does not match indices {len(self.index_1)}x{len(self.index_2)}")

    def lookup(self, slew: float, load: float) -> float:
        """Bilinear interpolation with clamping at the grid edges."""
        i, t = _bracket(self.index_1, slew)
        j, u = _bracket(self.index_2, load)
        v = self.values
        return float(
            (1 - t) * (1 - u) * v[i, j]
            + t * (1 - u) * v[i + 1, j]
            + (1 - t) * u * v[i, j + 1]
            + t * u * v[i + 1, j + 1]
        )

    def same_grid(self, other: "NldmTable") -> bool:
        return self.index_1 == other.index_1 and self.index_2 == other.index_2


def _bracket(index: Sequence[float], x: float) -> Tuple[int, float]:
    x = min(max(x, index[0]), index[-1])
    i = int(np.searchsorted(index, x, side="right")) - 1
    i = min(max(i, 0), len(index) - 2)
    low, high = index[i], index[i + 1]
    return i, (x - low) / (high - low)


@dataclass
class TimingArc:
    """Output-switching arcs of one pin under one side assignment."""

    pin: str
    side: Side
    sense: str
    cell_rise: NldmTable
    rise_transition: NldmTable
    cell_fall: NldmTable
    fall_transition: NldmTable
    rise_power: NldmTable
    fall_power: NldmTable

    def delay(self, output_direction: str) -> NldmTable:
        return self.cell_rise if output_direction == "rise" else self.cell_fall

    def transition(self, output_direction: str) -> NldmTable:
        return self.rise_transition if output_direction == "rise" else self.fall_transition

    def tables(self) -> Dict[str, NldmTable]:
        return {
            "cell_rise": self.cell_rise,
            "rise_transition": self.rise_transition,
            "cell_fall": self.cell_fall,
            "fall_transition": self.fall_transition,
            "rise_power": self.rise_power,
            "fall_power": self.fall_power,
        }


@dataclass
class HiddenPower:
    """Non-flip energy of one input pin under one side assignment, per input direction."""

    pin: str
    side: Side
    rise_power: NldmTable
    fall_power: NldmTable


@dataclass
class CellEntry:
    name: str
    area: float
    inputs: Tuple[str, ...]
    output: str
    function: str
    pin_caps: Dict[str, float]
    leakage: Dict[Tuple[int, ...], float]
    timing: List[TimingArc] = field(default_factory=list)
    hidden_power: List[HiddenPower] = field(default_factory=list)
    degenerate: bool = False
    # cell_leakage_power as read from a library file; None falls back to the state mean.
    leakage_reported: Optional[float] = None

    @property
    def leakage_average(self) -> float:
        return float(np.mean(list(self.leakage.values())))

    @property
    def cell_leakage_power(self) -> float:
        return self.leakage_average if self.leakage_reported is None else self.leakage_reported

    def arcs_for(self, pin: str) -> List[TimingArc]:
        return [arc for arc in self.timing if arc.pin == pin]

    def hidden_for(self, pin: str) -> List[HiddenPower]:
        return [entry for entry in self.hidden_power if entry.pin == pin]


@dataclass
class CharLibrary:
    """Per-cell NLDM tables, leakage and pin capacitance at one corner."""

    name: str
    technology: Technology
    corner: Corner
    index_1: Tuple[float, ...]
    index_2: Tuple[float, ...]
    cells: Dict[str, CellEntry] = field(default_factory=dict)

    @property
    def time_unit(self) -> str:
        return ranges_for(self.technology).time_unit

    def __contains__(self, name: object) -> bool:
        return name in self.cells

    def cell(self, name: str) -> CellEntry:
        try:
            return self.cells[name]
        except KeyError:
            raise CoverageError(f"cell '{name}' is not in library '{self.name}'")


def function_string(cell: CellNetlist) -> str:
    """Sum-of-minterms form of the cell's output, e.g. '!A&B | A&!B'."""
    terms = []
    for vector, out in boolean_function(cell).rows:
        if out:
            terms.append(when_string(tuple(zip(cell.inputs, vector))))
    return " | ".join(terms) if terms else "0"


def when_string(assignment: Side) -> str:
    return "&".join(pin if value else f"!{pin}" for pin, value in assignment)


def cell_area(cell: CellNetlist) -> float:
    return cell.total_width * AREA_PER_WIDTH


def library_grid(technology: "str | Technology", n_slew: int = 4, n_load: int = 4) -> Tuple[List[float], List[float]]:
    """Equally spaced slew and load breakpoints over the technology ranges."""
    if n_slew < 2 or n_load < 2:
        raise ValueError(f"library grid must be at least 2x2, got {n_slew}x{n_load}")
    ranges = ranges_for(technology)
    return equal_spacing(*ranges.slew, n_slew), equal_spacing(*ranges.load, n_load)


# Per-arc grids produced by a source: name -> (len(slews) x len(loads)) array.
ArcGrids = Dict[str, np.ndarray]


class OracleSource:
    """Ground-truth characterization through the analytical oracle."""

    name = "oracle"

    def __init__(self, params: Optional[SurrogateParams] = None):
        self.params = params

    def characterize_cell(
        self, cell: CellNetlist, corner: Corner, slews: Sequence[float], loads: Sequence[float]
    ) -> CellEntry:
        params = self.params or default_params(corner.technology)
        flip: Dict[int, ArcGrids] = {}
        static: Dict[int, np.ndarray] = {}
        degenerate = False
        arcs = enumerate_arcs(cell)
        for k, arc in enumerate(arcs):
            shape = (len(slews), len(loads))
            grids = {name: np.zeros(shape) for name in ("delay", "out_slew", "energy")}
            for (i, slew), (j, load) in itertools.product(enumerate(slews), enumerate(loads)):
                point = characterize(cell, arc, corner, slew, load, params)
                degenerate = degenerate or point.degenerate
                if arc.output_flips:
                    grids["delay"][i, j] = point.delay
                    grids["out_slew"][i, j] = point.out_slew
                    grids["energy"][i, j] = point.flip_energy
                else:
                    grids["energy"][i, j] = point.non_flip_energy
            if arc.output_flips:
                flip[k] = grids
            else:
                static[k] = grids["energy"]
        leakage = {
            state: leakage_power(cell, state, corner, params)
            for state in itertools.product((0, 1), repeat=len(cell.inputs))
        }
        caps = {pin: pin_capacitance(cell, pin, corner, params) for pin in cell.inputs}
        return assemble_entry(cell, arcs, slews, loads, flip, static, leakage, caps, degenerate)


class ModelSource:
    """
    Predicted characterization from the five trained models.

    Output slew is derived from the predicted delay through the oracle's
    delay/slew relation, out_slew = eta / ln2 * max(delay - beta * slew, 0).
    """

    name = "model"

    def __init__(
        self,
        models: Mapping["str | Task", Checkpoint],
        params: Optional[SurrogateParams] = None,
        jobs: int = 1,
    ):
        self.models = {Task.parse(task): checkpoint for task, checkpoint in models.items()}
        missing = [t.value for t in Task if t not in self.models]
        if missing:
            raise CoverageError(f"model library needs checkpoints for every task; missing {missing}")
        for task, checkpoint in self.models.items():
            if checkpoint.params.layout is not task.layout:
                raise ValueError(
                    f"{task.value} checkpoint has layout {checkpoint.params.layout.name}, expected {task.layout.name}"
                )
            if checkpoint.norm is None:
                raise ValueError(f"{task.value} checkpoint carries no normalization spec")
        self.params = params
        self.jobs = jobs

    def predict(self, task: Task, graphs) -> np.ndarray:
        checkpoint = self.models[task]
        return predict_batch(checkpoint.params, checkpoint.norm, graphs, jobs=self.jobs)

    def characterize_cell(
        self, cell: CellNetlist, corner: Corner, slews: Sequence[float], loads: Sequence[float]
    ) -> CellEntry:
        params = self.params or default_params(corner.technology)
        arcs = enumerate_arcs(cell)
        shape = (len(slews), len(loads))
        grid = list(itertools.product(slews, loads))
        flip_arcs = [(k, arc) for k, arc in enumerate(arcs) if arc.output_flips]
        static_arcs = [(k, arc) for k, arc in enumerate(arcs) if not arc.output_flips]

        def graphs_for(arc_list):
            return [
                encode(cell, corner, DelayStimulus(slew, load, arc.before, arc.after), arc=arc.label())
                for _, arc in arc_list
                for slew, load in grid
            ]

        flip: Dict[int, ArcGrids] = {}
        if flip_arcs:
            graphs = graphs_for(flip_arcs)
            delays = self.predict(Task.DELAY, graphs).reshape(len(flip_arcs), *shape)
            energies = self.predict(Task.FLIP_POWER, graphs).reshape(len(flip_arcs), *shape)
            slew_column = np.asarray(slews, dtype=np.float64)[:, None]
            for n, (k, _) in enumerate(flip_arcs):
                intrinsic = np.maximum(delays[n] - params.beta_slew * slew_column, 0.0)
                flip[k] = {
                    "delay": delays[n],
                    "out_slew": params.eta_slew / math.log(2.0) * intrinsic,
                    "energy": energies[n],
                }
        static: Dict[int, np.ndarray] = {}
        if static_arcs:
            values = self.predict(Task.NON_FLIP_POWER, graphs_for(static_arcs)).reshape(len(static_arcs), *shape)
            static = {k: values[n] for n, (k, _) in enumerate(static_arcs)}

        states = list(itertools.product((0, 1), repeat=len(cell.inputs)))
        leak_values = self.predict(Task.LEAKAGE, [encode(cell, corner, LeakageStimulus(s)) for s in states])
        cap_values = self.predict(Task.CAPACITANCE, [encode(cell, corner, CapacitanceStimulus(p)) for p in cell.inputs])
        leakage = {state: float(v) for state, v in zip(states, leak_values)}
        caps = {pin: float(v) for pin, v in zip(cell.inputs, cap_values)}
        return assemble_entry(cell, arcs, slews, loads, flip, static, leakage, caps, False)


def assemble_entry(
    cell: CellNetlist,
    arcs: Sequence[Arc],
    slews: Sequence[float],
    loads: Sequence[float],
    flip: Mapping[int, ArcGrids],
    static: Mapping[int, np.ndarray],
    leakage: Dict[Tuple[int, ...], float],
    caps: Dict[str, float],
    degenerate: bool,
) -> CellEntry:
    """Group per-arc grids by (pin, side) into timing and hidden-power entries."""
    index_1, index_2 = tuple(slews), tuple(loads)

    def table(values: np.ndarray) -> NldmTable:
        return NldmTable(index_1, index_2, np.array(values, dtype=np.float64))

    timing: List[TimingArc] = []
    hidden: List[HiddenPower] = []
    groups: Dict[Tuple[str, Side], Dict[str, int]] = {}
    for k, arc in enumerate(arcs):
        groups.setdefault((arc.pin, arc.side), {})[arc.direction] = k
    for (pin, side), by_direction in groups.items():
        rise_k, fall_k = by_direction["rise"], by_direction["fall"]
        if arcs[rise_k].output_flips:
            out_rise = rise_k if arcs[rise_k].output_direction == "rise" else fall_k
            out_fall = fall_k if out_rise == rise_k else rise_k
            timing.append(
                TimingArc(
                    pin=pin,
                    side=side,
                    sense="positive_unate" if out_rise == rise_k else "negative_unate",
                    cell_rise=table(flip[out_rise]["delay"]),
                    rise_transition=table(flip[out_rise]["out_slew"]),
                    cell_fall=table(flip[out_fall]["delay"]),
                    fall_transition=table(flip[out_fall]["out_slew"]),
                    rise_power=table(flip[out_rise]["energy"]),
                    fall_power=table(flip[out_fall]["energy"]),
                )
            )
        else:
            hidden.append(HiddenPower(pin, side, table(static[rise_k]), table(static[fall_k])))
    return CellEntry(
        name=cell.name,
        area=cell_area(cell),
        inputs=cell.inputs,
        output=cell.output,
        function=function_string(cell),
        pin_caps=caps,
        leakage=leakage,
        timing=timing,
        hidden_power=hidden,
        degenerate=degenerate,
    )


def build_library(
    source,
    catalog: CellCatalog,
    corner: Corner,
    slews: Sequence[float],
    loads: Sequence[float],
    name: Optional[str] = None,
    jobs: int = 1,
) -> CharLibrary:
    """
    Characterize every catalog cell at one corner.

    Args:
        source: OracleSource or ModelSource.
        catalog: Cells to include.
        corner: Corner, validated against the technology ranges.
        slews: Slew breakpoints (>= 2, increasing).
        loads: Load breakpoints (>= 2, increasing).
        name: Library name; derived from the source and corner when omitted.
        jobs: Worker threads across cells.

    Returns:
        CharLibrary with identical grids on every table.
    """
    if len(slews) < 2 or len(loads) < 2:
        raise ValueError(f"library grid must be at least 2x2, got {len(slews)}x{len(loads)}")
    corner.validate()
    cells = list(catalog)

    def run(cell: CellNetlist) -> CellEntry:
        return source.characterize_cell(cell, corner, slews, loads)

    if jobs > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(run, cells))
    else:
        entries = [run(cell) for cell in cells]
    library = CharLibrary(
        name=name or f"{catalog.technology.value}_{source.name}",
        technology=catalog.technology,
        corner=corner,
        index_1=tuple(slews),
        index_2=tuple(loads),
        cells={entry.name: entry for entry in entries},
    )
    flagged = [entry.name for entry in entries if entry.degenerate]
    if flagged:
        logger.warning("Library %s has degenerate oracle points in %d cells", library.name, len(flagged))
    logger.info("Built library %s with %d cells", library.name, len(entries))
    return library


# --- Metrics ---------------------------------------------------------------


@dataclass
class MetricReport:
    """Error metrics of one task; r2 is None when the truth vector is constant."""

    task: str
    count: int
    mape: float
    rmspe: float
    r2: Optional[float]
    per_cell: pd.DataFrame

    @property
    def r2_text(self) -> str:
        return "undefined" if self.r2 is None else f"{self.r2:.6g}"


def _scores(pred: np.ndarray, truth: np.ndarray) -> Tuple[float, float, Optional[float]]:
    relative = (pred - truth) / truth
    mape = 100.0 * float(np.mean(np.abs(relative)))
    rmspe = 100.0 * float(np.sqrt(np.mean(relative ** 2)))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(np.sum((pred - truth) ** 2)) / ss_tot
    return mape, rmspe, r2


def metrics(
    pred: Sequence[float],
    truth: Sequence[float],
    cells: Optional[Sequence[str]] = None,
    task: str = "",
) -> MetricReport:
    """
    MAPE, RMSPE and R2 of predictions against truth, optionally per cell.

    Raises:
        ValueError: On length mismatch, an empty input, or a non-positive truth value.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction length {pred.shape} does not match truth length {truth.shape}")
    if truth.size == 0:
        raise ValueError("metrics need at least one value")
    if np.any(truth <= 0):
        raise ValueError("truth values must be positive")
    mape, rmspe, r2 = _scores(pred, truth)

    rows = []
    if cells is not None:
        if len(cells) != len(truth):
            raise ValueError("cell labels must match the number of values")
        frame = pd.DataFrame({"cell": list(cells), "pred": pred, "truth": truth})
        for cell, group in frame.groupby("cell", sort=False):
            c_mape, c_rmspe, c_r2 = _scores(group["pred"].to_numpy(), group["truth"].to_numpy())
            rows.append({"cell": cell, "count": len(group), "mape": c_mape, "rmspe": c_rmspe, "r2": c_r2})
    per_cell = pd.DataFrame(rows, columns=["cell", "count", "mape", "rmspe", "r2"])
    return MetricReport(task, int(truth.size), mape, rmspe, r2, per_cell)


def library_values(library: CharLibrary, cells: Optional[Iterable[str]] = None) -> Dict[Task, Tuple[List[float], List[str]]]:
    """Flatten a library into per-task (values, cell labels) in deterministic order."""
    out: Dict[Task, Tuple[List[float], List[str]]] = {task: ([], []) for task in Task}

    def push(task: Task, values: Iterable[float], cell: str) -> None:
        for value in values:
            out[task][0].append(float(value))
            out[task][1].append(cell)

    for name in cells if cells is not None else library.cells:
        entry = library.cell(name)
        for arc in entry.timing:
            push(Task.DELAY, arc.cell_rise.values.ravel(), name)
            push(Task.DELAY, arc.cell_fall.values.ravel(), name)
            push(Task.FLIP_POWER, arc.rise_power.values.ravel(), name)
            push(Task.FLIP_POWER, arc.fall_power.values.ravel(), name)
        for hidden in entry.hidden_power:
            push(Task.NON_FLIP_POWER, hidden.rise_power.values.ravel(), name)
            push(Task.NON_FLIP_POWER, hidden.fall_power.values.ravel(), name)
        push(Task.LEAKAGE, entry.leakage.values(), name)
        push(Task.CAPACITANCE, entry.pin_caps.values(), name)
    return out


def compare_library_metrics(
    pred: CharLibrary, truth: CharLibrary, cells: Optional[Iterable[str]] = None
) -> Dict[Task, MetricReport]:
    """
    Per-task metrics between two structurally identical libraries.

    Raises:
        CoverageError: If cell sets or grids differ.
    """
    names = list(cells) if cells is not None else list(truth.cells)
    missing = [n for n in names if n not in pred.cells or n not in truth.cells]
    if missing:
        raise CoverageError(f"libraries do not both cover cells {missing}")
    if pred.index_1 != truth.index_1 or pred.index_2 != truth.index_2:
        raise CoverageError("libraries use different slew/load grids")
    pred_values = library_values(pred, names)
    truth_values = library_values(truth, names)
    reports = {}
    for task in Task:
        p, _ = pred_values[task]
        t, labels = truth_values[task]
        if len(p) != len(t):
            raise CoverageError(f"{task.value}: libraries have different arc structure")
        if t:
            reports[task] = metrics(p, t, labels, task.value)
    return reports


def metrics_frame(reports: Mapping[Task, MetricReport]) -> pd.DataFrame:
    rows = [
        {"task": task.value, "count": r.count, "mape": r.mape, "rmspe": r.rmspe, "r2": r.r2_text}
        for task, r in reports.items()
    ]
    return pd.DataFrame(rows, columns=["task", "count", "mape", "rmspe", "r2"])


PER_CELL_COLUMNS = ["task", "cell", "count", "mape", "rmspe", "r2"]


def per_cell_frame(reports: Mapping[Task, MetricReport]) -> pd.DataFrame:
    """Per-cell rows of every task; r2 is NaN where it is undefined."""
    # All-NA columns (r2 of single-value cells) are dropped before concat and restored by reindex.
    frames = [
        r.per_cell.assign(task=task.value).dropna(axis=1, how="all")
        for task, r in reports.items()
        if len(r.per_cell)
    ]
    if not frames:
        return pd.DataFrame(columns=PER_CELL_COLUMNS)
    return pd.concat(frames, ignore_index=True).reindex(columns=PER_CELL_COLUMNS)
