# ABOUTME: Writer and pyparsing-based reader for the Liberty subset used to exchange characterized libraries.
# ABOUTME: Emission is canonical, so emit -> parse -> emit reproduces the file byte for byte.

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pyparsing as pp

from cellgnn.errors import ConfigError, DataError, LibertySyntaxError
from cellgnn.libgen import CellEntry, CharLibrary, HiddenPower, NldmTable, Side, TimingArc, when_string
from cellgnn.technology import Corner, Technology

DELAY_TEMPLATE = "delay_template"
ENERGY_TEMPLATE = "energy_template"


def _num(value: float) -> str:
    return f"{value:.6g}"


def _index(values) -> str:
    return '"' + ", ".join(_num(v) for v in values) + '"'


class _Writer:
    def __init__(self):
        self.lines: List[str] = []
        self.depth = 0

    def line(self, text: str) -> None:
        self.lines.append("  " * self.depth + text)

    def attr(self, name: str, value: str) -> None:
        self.line(f"{name} : {value} ;")

    def open(self, name: str, arg: str = "") -> None:
        self.line(f"{name} ({arg}) {{")
        self.depth += 1

    def close(self) -> None:
        self.depth -= 1
        self.line("}")

    def table(self, name: str, template: str, table: NldmTable) -> None:
        self.open(name, template)
        rows = ", ".join(_index(row) for row in table.values)
        self.line(f"values ({rows}) ;")
        self.close()


def format_liberty(library: CharLibrary) -> str:
    """
    Render a library in the Liberty subset.

    Raises:
        DataError: If the library has no cells.
    """
    if not library.cells:
        raise DataError(f"library '{library.name}' has no cells")
    corner = library.corner
    w = _Writer()
    w.open("library", library.name)
    w.attr("technology", f'"{library.technology.value}"')
    w.attr("delay_model", "table_lookup")
    w.attr("time_unit", f'"1{library.time_unit}"')
    w.attr("voltage_unit", '"1V"')
    w.attr("leakage_power_unit", '"1nW"')
    w.line("capacitive_load_unit (1, ff) ;")
    w.attr("nom_voltage", _num(corner.vdd))
    w.attr("nom_threshold", _num(corner.vth))
    if library.technology is Technology.FLEXIBLE:
        w.attr("nom_cox", _num(corner.third))
    else:
        w.attr("nom_temperature", _num(corner.third))
    for group, template, variable_1 in (
        ("lu_table_template", DELAY_TEMPLATE, "input_net_transition"),
        ("power_lut_template", ENERGY_TEMPLATE, "input_transition_time"),
    ):
        w.open(group, template)
        w.attr("variable_1", variable_1)
        w.attr("variable_2", "total_output_net_capacitance")
        w.line(f"index_1 ({_index(library.index_1)}) ;")
        w.line(f"index_2 ({_index(library.index_2)}) ;")
        w.close()
    for entry in library.cells.values():
        _write_cell(w, entry)
    w.close()
    return "\n".join(w.lines) + "\n"


def _write_when(w: _Writer, side: Side) -> None:
    if side:
        w.attr("when", f'"{when_string(side)}"')


def _write_cell(w: _Writer, entry: CellEntry) -> None:
    w.open("cell", entry.name)
    w.attr("area", _num(entry.area))
    w.attr("cell_leakage_power", _num(entry.cell_leakage_power))
    for state, value in entry.leakage.items():
        w.open("leakage_power")
        w.attr("when", f'"{when_string(tuple(zip(entry.inputs, state)))}"')
        w.attr("value", _num(value))
        w.close()
    for pin in entry.inputs:
        w.open("pin", pin)
        w.attr("direction", "input")
        w.attr("capacitance", _num(entry.pin_caps[pin]))
        for hidden in entry.hidden_for(pin):
            w.open("internal_power")
            _write_when(w, hidden.side)
            w.table("rise_power", ENERGY_TEMPLATE, hidden.rise_power)
            w.table("fall_power", ENERGY_TEMPLATE, hidden.fall_power)
            w.close()
        w.close()
    w.open("pin", entry.output)
    w.attr("direction", "output")
    w.attr("function", f'"{entry.function}"')
    for arc in entry.timing:
        w.open("timing")
        w.attr("related_pin", f'"{arc.pin}"')
        _write_when(w, arc.side)
        w.attr("timing_sense", arc.sense)
        for name in ("cell_rise", "rise_transition", "cell_fall", "fall_transition"):
            w.table(name, DELAY_TEMPLATE, getattr(arc, name))
        w.close()
    for arc in entry.timing:
        w.open("internal_power")
        w.attr("related_pin", f'"{arc.pin}"')
        _write_when(w, arc.side)
        w.table("rise_power", ENERGY_TEMPLATE, arc.rise_power)
        w.table("fall_power", ENERGY_TEMPLATE, arc.fall_power)
        w.close()
    w.close()
    w.close()


def emit_liberty(library: CharLibrary, path: "str | Path") -> Path:
    """Write a library file; see format_liberty."""
    text = format_liberty(library)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


# --- Parsing ---------------------------------------------------------------


@dataclass
class _Node:
    name: str
    args: List[str]
    children: Optional[List["_Node"]]
    line: int
    column: int
    form: str

    @property
    def is_group(self) -> bool:
        return self.form == "group"

    def error(self, message: str) -> LibertySyntaxError:
        return LibertySyntaxError(message, self.line, self.column)

    def value(self) -> str:
        if len(self.args) != 1:
            raise self.error(f"'{self.name}' expects one value")
        return self.args[0]

    def number(self) -> float:
        try:
            return float(self.value())
        except ValueError:
            raise self.error(f"'{self.name}' expects a number, got '{self.value()}'")


def _grammar() -> pp.ParserElement:
    lpar, rpar, lbrace, rbrace, colon, semi, comma = map(pp.Suppress, "(){}:;,")
    ident = pp.Word(pp.alphas + "_", pp.alphanums + "_.")
    number = pp.Regex(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
    quoted = pp.QuotedString('"')
    value = quoted | number | ident
    statement = pp.Forward()

    simple = ident + colon + value + semi

    def simple_node(s, loc, toks):
        return _Node(toks[0], [toks[1]], None, pp.lineno(loc, s), pp.col(loc, s), "attr")

    simple.set_parse_action(simple_node)

    args = pp.Group(pp.Optional(value + pp.ZeroOrMore(comma + value)))
    body = pp.Group(pp.ZeroOrMore(statement))
    grouped = ident + lpar + args + rpar + (semi | (lbrace + body + rbrace))

    def grouped_node(s, loc, toks):
        children = list(toks[2]) if len(toks) > 2 else None
        form = "complex" if children is None else "group"
        return _Node(toks[0], list(toks[1]), children, pp.lineno(loc, s), pp.col(loc, s), form)

    grouped.set_parse_action(grouped_node)
    statement <<= simple | grouped
    top = statement + pp.StringEnd()
    top.ignore(pp.c_style_comment)
    return top


_GRAMMAR = _grammar()


def _children(node: _Node, allowed: Dict[str, str]) -> Dict[str, List[_Node]]:
    """Bucket children by name, rejecting anything outside `allowed` (name -> attr, complex or group)."""
    found: Dict[str, List[_Node]] = {}
    for child in node.children or []:
        kind = allowed.get(child.name)
        if kind is None:
            raise child.error(f"unsupported construct '{child.name}' in {node.name}")
        if kind != child.form:
            raise child.error(f"'{child.name}' has the wrong form in {node.name}")
        found.setdefault(child.name, []).append(child)
    return found


def _one(found: Dict[str, List[_Node]], name: str, parent: _Node) -> _Node:
    nodes = found.get(name, [])
    if len(nodes) != 1:
        raise parent.error(f"{parent.name} needs exactly one '{name}', found {len(nodes)}")
    return nodes[0]


def _parse_index(node: _Node) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in node.value().split(","))
    except ValueError:
        raise node.error(f"'{node.name}' must be a comma-separated number list")


def _parse_when(node: Optional[_Node]) -> Side:
    if node is None:
        return ()
    side = []
    for literal in node.value().split("&"):
        literal = literal.strip()
        if not literal:
            raise node.error(f"empty literal in when '{node.value()}'")
        side.append((literal[1:], 0) if literal.startswith("!") else (literal, 1))
    return tuple(side)


def _parse_table(node: _Node, template: str, grids: Dict[str, Tuple[Tuple[float, ...], Tuple[float, ...]]]) -> NldmTable:
    if not node.args or node.args[0] != template:
        raise node.error(f"'{node.name}' must use template {template}")
    values = [c for c in node.children if c.name == "values"]
    for child in node.children:
        if child.name != "values":
            raise child.error(f"unsupported construct '{child.name}' in {node.name}")
    if len(values) != 1 or values[0].form != "complex":
        raise node.error(f"'{node.name}' needs one values (...) list")
    index_1, index_2 = grids[template]
    try:
        rows = [[float(v) for v in row.split(",")] for row in values[0].args]
        return NldmTable(index_1, index_2, np.array(rows, dtype=np.float64))
    except ValueError as exc:
        raise values[0].error(f"bad table values: {exc}")


def _parse_template(node: _Node) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    found = _children(node, {"variable_1": "attr", "variable_2": "attr", "index_1": "complex", "index_2": "complex"})
    return _parse_index(_one(found, "index_1", node)), _parse_index(_one(found, "index_2", node))


def parse_liberty_text(text: str) -> CharLibrary:
    """
    Parse Liberty-subset text written by format_liberty.

    Raises:
        LibertySyntaxError: On grammar violations or unsupported constructs,
            with line and column.
    """
    try:
        (root,) = _GRAMMAR.parse_string(text, parse_all=True)
    except pp.ParseBaseException as exc:
        raise LibertySyntaxError(exc.msg, exc.lineno, exc.col)
    if root.name != "library" or not root.is_group:
        raise root.error(f"expected a library group, found '{root.name}'")
    lib_name = root.value()
    found = _children(
        root,
        {
            "technology": "attr",
            "delay_model": "attr",
            "time_unit": "attr",
            "voltage_unit": "attr",
            "leakage_power_unit": "attr",
            "capacitive_load_unit": "complex",
            "nom_voltage": "attr",
            "nom_threshold": "attr",
            "nom_temperature": "attr",
            "nom_cox": "attr",
            "lu_table_template": "group",
            "power_lut_template": "group",
            "cell": "group",
        },
    )
    tech_node = _one(found, "technology", root)
    try:
        technology = Technology.parse(tech_node.value())
    except ConfigError:
        raise tech_node.error(f"unknown technology '{tech_node.value()}'")
    third_name = "nom_cox" if technology is Technology.FLEXIBLE else "nom_temperature"
    corner = Corner(
        technology,
        _one(found, "nom_voltage", root).number(),
        _one(found, "nom_threshold", root).number(),
        _one(found, third_name, root).number(),
    )
    grids = {}
    for group, template in (("lu_table_template", DELAY_TEMPLATE), ("power_lut_template", ENERGY_TEMPLATE)):
        node = _one(found, group, root)
        if node.value() != template:
            raise node.error(f"expected template name {template}")
        grids[template] = _parse_template(node)
    if grids[DELAY_TEMPLATE] != grids[ENERGY_TEMPLATE]:
        raise root.error("delay and energy templates use different grids")

    cells = [_parse_cell(node, grids) for node in found.get("cell", [])]
    if not cells:
        raise root.error("library has no cells")
    index_1, index_2 = grids[DELAY_TEMPLATE]
    return CharLibrary(lib_name, technology, corner, index_1, index_2, {c.name: c for c in cells})


def parse_liberty(path: "str | Path") -> CharLibrary:
    path = Path(path)
    if not path.exists():
        raise DataError(f"library file not found: {path}")
    return parse_liberty_text(path.read_text(encoding="utf-8"))


@dataclass
class _PinData:
    direction: str
    capacitance: Optional[float] = None
    function: str = ""
    timing: List[TimingArc] = field(default_factory=list)
    power: List[Tuple[str, Side, NldmTable, NldmTable]] = field(default_factory=list)
    hidden: List[HiddenPower] = field(default_factory=list)


def _parse_cell(node: _Node, grids) -> CellEntry:
    found = _children(node, {"area": "attr", "cell_leakage_power": "attr", "leakage_power": "group", "pin": "group"})
    pins: Dict[str, _PinData] = {}
    order: List[str] = []
    for pin_node in found.get("pin", []):
        name = pin_node.value()
        pins[name] = _parse_pin(pin_node, grids)
        order.append(name)
    inputs = tuple(p for p in order if pins[p].direction == "input")
    outputs = [p for p in order if pins[p].direction == "output"]
    if len(outputs) != 1:
        raise node.error(f"cell {node.value()} needs exactly one output pin")
    output = pins[outputs[0]]

    leakage: Dict[Tuple[int, ...], float] = {}
    for leak in found.get("leakage_power", []):
        parts = _children(leak, {"when": "attr", "value": "attr"})
        assignment = dict(_parse_when(_one(parts, "when", leak)))
        if set(assignment) != set(inputs):
            raise leak.error(f"leakage condition must assign every input of {node.value()}")
        leakage[tuple(assignment[p] for p in inputs)] = _one(parts, "value", leak).number()

    powers = {(pin, side): (rise, fall) for pin, side, rise, fall in output.power}
    for arc in output.timing:
        if (arc.pin, arc.side) not in powers:
            raise node.error(f"cell {node.value()}: timing arc on {arc.pin} has no internal_power")
        arc.rise_power, arc.fall_power = powers[(arc.pin, arc.side)]

    return CellEntry(
        name=node.value(),
        area=_one(found, "area", node).number(),
        inputs=inputs,
        output=outputs[0],
        function=output.function,
        pin_caps={p: pins[p].capacitance for p in inputs},
        leakage=leakage,
        timing=output.timing,
        hidden_power=[h for p in inputs for h in pins[p].hidden],
        leakage_reported=_one(found, "cell_leakage_power", node).number() if "cell_leakage_power" in found else None,
    )


def _parse_pin(node: _Node, grids) -> _PinData:
    found = _children(
        node,
        {"direction": "attr", "capacitance": "attr", "function": "attr", "timing": "group", "internal_power": "group"},
    )
    pin = node.value()
    data = _PinData(direction=_one(found, "direction", node).value())
    if data.direction == "input":
        data.capacitance = _one(found, "capacitance", node).number()
        for power in found.get("internal_power", []):
            parts = _children(power, {"when": "attr", "rise_power": "group", "fall_power": "group"})
            data.hidden.append(
                HiddenPower(
                    pin,
                    _parse_when(parts.get("when", [None])[0]),
                    _parse_table(_one(parts, "rise_power", power), ENERGY_TEMPLATE, grids),
                    _parse_table(_one(parts, "fall_power", power), ENERGY_TEMPLATE, grids),
                )
            )
    elif data.direction == "output":
        data.function = _one(found, "function", node).value()
        for timing in found.get("timing", []):
            parts = _children(
                timing,
                {
                    "related_pin": "attr",
                    "when": "attr",
                    "timing_sense": "attr",
                    "cell_rise": "group",
                    "rise_transition": "group",
                    "cell_fall": "group",
                    "fall_transition": "group",
                },
            )
            tables = {
                name: _parse_table(_one(parts, name, timing), DELAY_TEMPLATE, grids)
                for name in ("cell_rise", "rise_transition", "cell_fall", "fall_transition")
            }
            data.timing.append(
                TimingArc(
                    pin=_one(parts, "related_pin", timing).value(),
                    side=_parse_when(parts.get("when", [None])[0]),
                    sense=_one(parts, "timing_sense", timing).value(),
                    rise_power=None,
                    fall_power=None,
                    **tables,
                )
            )
        for power in found.get("internal_power", []):
            parts = _children(
                power, {"related_pin": "attr", "when": "attr", "rise_power": "group", "fall_power": "group"}
            )
            data.power.append(
                (
                    _one(parts, "related_pin", power).value(),
                    _parse_when(parts.get("when", [None])[0]),
                    _parse_table(_one(parts, "rise_power", power), ENERGY_TEMPLATE, grids),
                    _parse_table(_one(parts, "fall_power", power), ENERGY_TEMPLATE, grids),
                )
            )
    else:
        raise _one(found, "direction", node).error(f"unsupported pin direction '{data.direction}'")
    return data
