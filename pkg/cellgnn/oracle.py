# ABOUTME: Analytical characterization engine standing in for transistor-level simulation.
# ABOUTME: Extracts cell logic from the FET network and computes delay, slew, energy, leakage and pin capacitance.

import itertools
import logging
import math
from dataclasses import dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

from cellgnn.errors import ConfigError, MalformedCellError
from cellgnn.netlist import CellNetlist, Polarity, Transistor
from cellgnn.technology import Corner, Technology, nominal_corner

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"
THERMAL_VOLTAGE_300K = 0.02585
REFERENCE_KELVIN = 300.0


@dataclass(frozen=True)
class SurrogateParams:
    """
    Constants of the closed-form transistor model.

    Conductances are in uS, so 1000/g is a resistance in kOhm and a
    kOhm x fF product is a time in ps; `time_scale` converts ps into the
    technology's time unit.
    """

    k_drive: float = 40.0
    alpha: float = 1.3
    beta_slew: float = 0.25
    c_gate: float = 0.9
    c_drain: float = 0.6
    i_leak: float = 4.0
    n_ss: float = 1.5
    gamma_sc: float = 0.02
    eta_slew: float = 2.2
    theta_t: float = 1.5
    cox_ref: float = 90.0
    time_scale: float = 1.0
    floor_fraction: float = 1e-6
    internal_stage_non_flip: bool = True

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name != "internal_stage_non_flip" and not value > 0:
                raise ConfigError(f"surrogate parameter {f.name} must be positive, got {value}")


# Config-file key -> SurrogateParams field.
PARAM_KEYS = {
    "K": "k_drive",
    "ALPHA": "alpha",
    "BETA_SLEW": "beta_slew",
    "C_G": "c_gate",
    "C_D": "c_drain",
    "I0": "i_leak",
    "N_SS": "n_ss",
    "GAMMA_SC": "gamma_sc",
    "ETA_SLEW": "eta_slew",
    "THETA_T": "theta_t",
    "COX_REF": "cox_ref",
    "TIME_SCALE": "time_scale",
    "FLOOR_FRACTION": "floor_fraction",
    "INTERNAL_STAGE_NON_FLIP": "internal_stage_non_flip",
}


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got '{text}'")


def params_from_mapping(values: Mapping[str, Optional[str]], base: Optional[SurrogateParams] = None) -> SurrogateParams:
    """
    Build SurrogateParams from key=value pairs layered over `base`.

    Raises:
        ConfigError: On unknown keys or unparsable values.
    """
    settings = {f.name: getattr(base or SurrogateParams(), f.name) for f in fields(SurrogateParams)}
    for key, text in values.items():
        name = PARAM_KEYS.get(key.upper())
        if name is None:
            raise ConfigError(f"unknown surrogate parameter '{key}'")
        if text is None:
            raise ConfigError(f"surrogate parameter '{key}' has no value")
        if name == "internal_stage_non_flip":
            settings[name] = _parse_bool(key, text)
        else:
            try:
                settings[name] = float(text)
            except ValueError:
                raise ConfigError(f"surrogate parameter '{key}' must be a number, got '{text}'")
    return SurrogateParams(**settings)


def load_params(source: "str | Path | Technology") -> SurrogateParams:
    """
    Load surrogate constants from a preset name or a key=value file.

    Args:
        source: 'silicon45', 'flexible', a Technology, or a path to a file.
            A file may set any subset of keys; missing keys fall back to
            the silicon45 defaults.

    Returns:
        SurrogateParams.
    """
    if isinstance(source, Technology):
        source = source.value
    preset = PRESET_DIR / f"{source}.cfg"
    path = preset if preset.exists() else Path(source)
    if not path.exists():
        raise ConfigError(f"surrogate parameter file or preset '{source}' not found")
    return params_from_mapping(dotenv_values(path))


def default_params(technology: "str | Technology") -> SurrogateParams:
    return load_params(Technology.parse(technology))


# --- Logic extraction ------------------------------------------------------


def _is_on(fet: Transistor, values: Mapping[str, int]) -> bool:
    gate = values[fet.gate]
    return gate == 0 if fet.polarity is Polarity.P else gate == 1


def _channel_component(cell: CellNetlist, net: str) -> Tuple[Transistor, ...]:
    """FETs channel-connected to `net` without crossing a rail."""
    rails = set(cell.rails)
    found: List[Transistor] = []
    seen = {net}
    frontier = [net]
    while frontier:
        current = frontier.pop()
        for fet in cell.fets:
            if fet in found or not fet.touches(current):
                continue
            found.append(fet)
            other = fet.source if fet.drain == current else fet.drain
            if other not in rails and other not in seen:
                seen.add(other)
                frontier.append(other)
    return tuple(found)


def _conducting_fets(
    cell: CellNetlist, start: str, rail: str, polarity: Polarity, values: Mapping[str, int]
) -> Optional[Tuple[Transistor, ...]]:
    """ON FETs of one polarity reachable from `start`, or None if `rail` is not reached."""
    rails = set(cell.rails)
    used: List[Transistor] = []
    seen = {start}
    frontier = [start]
    reached = False
    while frontier:
        net = frontier.pop()
        for fet in cell.fets:
            if fet.polarity is not polarity or fet in used or not fet.touches(net):
                continue
            if not _is_on(fet, values):
                continue
            used.append(fet)
            other = fet.source if fet.drain == net else fet.drain
            if other == rail:
                reached = True
            elif other not in rails and other not in seen:
                seen.add(other)
                frontier.append(other)
    return tuple(used) if reached else None


@lru_cache(maxsize=None)
def _stage_nets(cell: CellNetlist) -> Tuple[str, ...]:
    """Nets whose logic value matters: the output and every internal net that gates a FET."""
    gates = {fet.gate for fet in cell.fets}
    internal = sorted(n for n in cell.internal_nets if n in gates)
    return tuple(internal) + (cell.output,)


@lru_cache(maxsize=None)
def net_values(cell: CellNetlist, state: Tuple[int, ...]) -> Mapping[str, int]:
    """
    Resolve the logic value of every stage net for one input vector.

    Stages are evaluated once all their gate nets are known. A net is 1 when
    ON PFETs connect it to VDD and 0 when ON NFETs connect it to VSS.

    Raises:
        MalformedCellError: On contention, a floating net, or a gate loop.
    """
    if len(state) != len(cell.inputs):
        raise ValueError(f"{cell.name}: expected {len(cell.inputs)} input values, got {len(state)}")
    values: Dict[str, int] = {cell.vdd: 1, cell.vss: 0}
    values.update({pin: int(bit) for pin, bit in zip(cell.inputs, state)})
    pending = list(_stage_nets(cell))
    while pending:
        progressed = False
        for net in list(pending):
            component = _channel_component(cell, net)
            if any(fet.gate not in values for fet in component):
                continue
            up = _conducting_fets(cell, net, cell.vdd, Polarity.P, values) is not None
            down = _conducting_fets(cell, net, cell.vss, Polarity.N, values) is not None
            if up and down:
                raise MalformedCellError(f"{cell.name}: contention on '{net}' for inputs {state}")
            if not up and not down:
                raise MalformedCellError(f"{cell.name}: '{net}' floats for inputs {state}")
            values[net] = 1 if up else 0
            pending.remove(net)
            progressed = True
        if not progressed:
            raise MalformedCellError(f"{cell.name}: cannot resolve nets {pending} (gate loop)")
    return values


@dataclass(frozen=True)
class TruthTable:
    inputs: Tuple[str, ...]
    rows: Tuple[Tuple[Tuple[int, ...], int], ...]

    def output(self, vector: Tuple[int, ...]) -> int:
        return dict(self.rows)[tuple(vector)]

    def as_dict(self) -> Dict[Tuple[int, ...], int]:
        return dict(self.rows)


@lru_cache(maxsize=None)
def boolean_function(cell: CellNetlist) -> TruthTable:
    """
    Truth table of a static CMOS cell over all input vectors.

    Vectors are in binary counting order with the first input as MSB.

    Raises:
        MalformedCellError: If any vector leads to contention or high-Z.
    """
    rows = []
    for vector in itertools.product((0, 1), repeat=len(cell.inputs)):
        rows.append((vector, net_values(cell, vector)[cell.output]))
    return TruthTable(cell.inputs, tuple(rows))


@dataclass(frozen=True)
class Arc:
    """
    One input transition of one pin with the other pins held.

    Attributes:
        cell: Cell name.
        pin: Flipping input pin.
        side: (pin, value) pairs of the non-flipping pins.
        direction: 'rise' or 'fall' at the flipping pin.
        output_flips: Whether the output toggles.
        before, after: Full input vectors around the transition.
        output_after: Output value after the transition.
    """

    cell: str
    pin: str
    side: Tuple[Tuple[str, int], ...]
    direction: str
    output_flips: bool
    before: Tuple[int, ...]
    after: Tuple[int, ...]
    output_after: int

    @property
    def output_direction(self) -> Optional[str]:
        if not self.output_flips:
            return None
        return "rise" if self.output_after == 1 else "fall"

    def label(self) -> str:
        side = ",".join(f"{pin}={value}" for pin, value in self.side)
        return f"{self.pin}:{self.direction}[{side}]"


def enumerate_arcs(cell: CellNetlist) -> List[Arc]:
    """
    Every (pin, side assignment, direction) arc of a cell.

    Pins follow declaration order, side assignments binary order, rise
    before fall.
    """
    table = boolean_function(cell).as_dict()
    arcs = []
    for index, pin in enumerate(cell.inputs):
        others = [p for p in cell.inputs if p != pin]
        for side_values in itertools.product((0, 1), repeat=len(others)):
            side = tuple(zip(others, side_values))
            for direction, (start, end) in (("rise", (0, 1)), ("fall", (1, 0))):
                before = _vector(cell, pin, start, side)
                after = _vector(cell, pin, end, side)
                arcs.append(
                    Arc(
                        cell=cell.name,
                        pin=pin,
                        side=side,
                        direction=direction,
                        output_flips=table[before] != table[after],
                        before=before,
                        after=after,
                        output_after=table[after],
                    )
                )
    return arcs


def _vector(cell: CellNetlist, pin: str, value: int, side: Tuple[Tuple[str, int], ...]) -> Tuple[int, ...]:
    held = dict(side)
    held[pin] = value
    return tuple(held[p] for p in cell.inputs)


# --- Electrical model ------------------------------------------------------


def _overdrive(corner: Corner) -> float:
    return corner.vdd - abs(corner.vth)


def _temperature_factor(corner: Corner, params: SurrogateParams) -> float:
    if corner.technology is Technology.FLEXIBLE:
        return 1.0
    return (REFERENCE_KELVIN / corner.temperature_kelvin) ** params.theta_t


def _thermal_voltage(corner: Corner) -> float:
    if corner.technology is Technology.FLEXIBLE:
        return THERMAL_VOLTAGE_300K
    return THERMAL_VOLTAGE_300K * corner.temperature_kelvin / REFERENCE_KELVIN


def _gate_cap_per_width(corner: Corner, params: SurrogateParams) -> float:
    if corner.technology is Technology.FLEXIBLE:
        return params.c_gate * corner.cox / params.cox_ref
    return params.c_gate


def conductance(width: float, corner: Corner, params: SurrogateParams) -> Tuple[float, bool]:
    """
    ON conductance of one FET in uS and whether it hit the degenerate floor.

    g = K * W * (Vdd - |Vth|)^alpha / Vdd * (T0/T)^theta; when the overdrive
    vanishes the value is floored at `floor_fraction` of the nominal corner.
    """
    overdrive = _overdrive(corner)
    raw = 0.0
    if overdrive > 0:
        raw = params.k_drive * width * overdrive ** params.alpha / corner.vdd
        raw *= _temperature_factor(corner, params)
    nominal = nominal_corner(corner.technology)
    floor = params.floor_fraction * params.k_drive * width * _overdrive(nominal) ** params.alpha / nominal.vdd
    if raw < floor:
        return floor, True
    return raw, False


@lru_cache(maxsize=65536)
def _resistance(
    cell: CellNetlist, state: Tuple[int, ...], rail: str, corner: Corner, params: SurrogateParams
) -> Tuple[float, bool, Tuple[Transistor, ...]]:
    values = net_values(cell, state)
    polarity = Polarity.P if rail == cell.vdd else Polarity.N
    path = _conducting_fets(cell, cell.output, rail, polarity, values)
    if path is None:
        raise ValueError(f"{cell.name}: no conducting path from {cell.output} to {rail} for inputs {state}")

    nets = sorted({net for fet in path for net in fet.channel} - {rail})
    index = {net: i for i, net in enumerate(nets)}
    laplacian = np.zeros((len(nets), len(nets)))
    degenerate = False
    for fet in path:
        g, floored = conductance(fet.width, corner, params)
        degenerate = degenerate or floored
        a, b = (index.get(net) for net in fet.channel)
        if a is not None:
            laplacian[a, a] += g
        if b is not None:
            laplacian[b, b] += g
        if a is not None and b is not None:
            laplacian[a, b] -= g
            laplacian[b, a] -= g
    injection = np.zeros(len(nets))
    injection[index[cell.output]] = 1.0
    potentials = np.linalg.solve(laplacian, injection)
    # uS network driven by 1 uA: the potential in MV is the resistance in MOhm.
    return float(potentials[index[cell.output]]) * 1000.0, degenerate, path


def effective_resistance(
    cell: CellNetlist, state: Tuple[int, ...], rail: str, params: SurrogateParams, corner: Corner
) -> float:
    """
    Effective resistance in kOhm between the output and a rail.

    Solves the node-conductance system of the ON FETs channel-connected to
    the output with unit current injected at the output.

    Args:
        cell: Cell.
        state: Input vector.
        rail: Rail net name, normally 'VDD' or 'VSS'.
        params: Surrogate constants.
        corner: Technology point.

    Raises:
        ValueError: If the rail's network does not conduct for `state`.
    """
    return _resistance(cell, tuple(state), rail, corner, params)[0]


@dataclass(frozen=True)
class CharPoint:
    """
    Oracle result for one arc at one (corner, slew, load) point.

    delay/out_slew/flip_energy are set for output_flips arcs and
    non_flip_energy for output_static arcs.
    """

    delay: Optional[float]
    out_slew: Optional[float]
    flip_energy: Optional[float]
    non_flip_energy: Optional[float]
    leakage_power: float
    pin_caps: Mapping[str, float]
    degenerate: bool = False


def leakage_power(cell: CellNetlist, state: Tuple[int, ...], corner: Corner, params: SurrogateParams) -> float:
    """Static power in nW: Vdd * sum over OFF FETs of I0 * W * exp(-|Vth| / (n * vT))."""
    values = net_values(cell, tuple(state))
    per_width = params.i_leak * math.exp(-abs(corner.vth) / (params.n_ss * _thermal_voltage(corner)))
    off_width = sum(fet.width for fet in cell.fets if not _is_on(fet, values))
    return corner.vdd * per_width * off_width


def pin_capacitance(cell: CellNetlist, pin: str, corner: Corner, params: SurrogateParams) -> float:
    """Input capacitance in fF: gate capacitance of every FET the pin drives."""
    if pin not in cell.inputs:
        raise ValueError(f"{cell.name}: '{pin}' is not an input pin")
    return _gate_cap_per_width(corner, params) * sum(fet.width for fet in cell.fets_gated_by(pin))


def characterize(
    cell: CellNetlist,
    arc: Arc,
    corner: Corner,
    slew: float,
    load: float,
    params: SurrogateParams,
) -> CharPoint:
    """
    Evaluate the closed-form model for one arc.

    Args:
        cell: Cell.
        arc: Arc from enumerate_arcs.
        corner: Technology point.
        slew: Input transition in the technology time unit.
        load: Output load in fF.
        params: Surrogate constants.

    Returns:
        CharPoint; `degenerate` is set when Vdd <= |Vth| forced the floor.
    """
    if slew < 0 or load < 0:
        raise ValueError(f"slew and load must be non-negative, got slew={slew}, load={load}")
    vdd = corner.vdd
    delay = out_slew = flip = non_flip = None
    degenerate = _overdrive(corner) <= 0

    if arc.output_flips:
        rail = cell.vdd if arc.output_after == 1 else cell.vss
        resistance, floored, path = _resistance(cell, arc.after, rail, corner, params)
        degenerate = degenerate or floored
        c_internal = params.c_drain * sum(fet.width for fet in cell.fets_on(cell.output))
        c_total = load + c_internal
        tau = resistance * c_total * params.time_scale
        delay = math.log(2.0) * tau + params.beta_slew * slew
        out_slew = params.eta_slew * tau
        w_drive = sum(fet.width for fet in path if fet.touches(cell.output))
        short_circuit = (
            params.gamma_sc * slew * params.k_drive * w_drive * max(_overdrive(corner), 0.0) ** params.alpha
        )
        flip = 0.5 * c_total * vdd ** 2 + short_circuit
    else:
        c_gate = _gate_cap_per_width(corner, params)
        switched = c_gate * sum(fet.width for fet in cell.fets_gated_by(arc.pin))
        if params.internal_stage_non_flip:
            switched += _internal_switched_cap(cell, arc, corner, params)
        non_flip = 0.5 * vdd ** 2 * switched

    return CharPoint(
        delay=delay,
        out_slew=out_slew,
        flip_energy=flip,
        non_flip_energy=non_flip,
        leakage_power=leakage_power(cell, arc.after, corner, params),
        pin_caps={pin: pin_capacitance(cell, pin, corner, params) for pin in cell.inputs},
        degenerate=degenerate,
    )


def _internal_switched_cap(cell: CellNetlist, arc: Arc, corner: Corner, params: SurrogateParams) -> float:
    """Capacitance of internal stage outputs that toggle during a non-flip arc."""
    before = net_values(cell, arc.before)
    after = net_values(cell, arc.after)
    c_gate = _gate_cap_per_width(corner, params)
    total = 0.0
    for net in _stage_nets(cell):
        if net == cell.output or before[net] == after[net]:
            continue
        total += params.c_drain * sum(fet.width for fet in cell.fets_on(net))
        total += c_gate * sum(fet.width for fet in cell.fets_gated_by(net))
    return total


def clear_caches() -> None:
    """Drop memoized logic and resistance results (used before runtime measurements)."""
    for cached in (_stage_nets, net_values, boolean_function, _resistance):
        cached.cache_clear()
