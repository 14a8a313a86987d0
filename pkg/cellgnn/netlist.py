# ABOUTME: Transistor-level cell netlists: parsing, writing, the default 33-cell catalog, and drive scaling.
# ABOUTME: Cells are immutable static-CMOS subcircuits built from complementary pull-up/pull-down stages.

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

from cellgnn.errors import DataError, MalformedCellError, NetlistSyntaxError
from cellgnn.technology import Technology

_DRIVE_SUFFIX = re.compile(r"^(?P<base>.+?)X(?P<drive>\d+)$")


class Polarity(str, Enum):
    N = "N"
    P = "P"


@dataclass(frozen=True)
class Transistor:
    """
    One FET of a cell.

    Attributes:
        id: Identifier written after the 'M' of the source line.
        polarity: N or P.
        drain, gate, source, bulk: Net names.
        width: Length-normalized width multiple.
    """

    id: str
    polarity: Polarity
    drain: str
    gate: str
    source: str
    bulk: str
    width: float

    @property
    def channel(self) -> Tuple[str, str]:
        return (self.drain, self.source)

    def touches(self, net: str) -> bool:
        """True if the drain or source sits on `net`."""
        return net in (self.drain, self.source)


@dataclass(frozen=True)
class CellNetlist:
    """Transistor-level description of one single-output standard cell."""

    name: str
    inputs: Tuple[str, ...]
    output: str
    fets: Tuple[Transistor, ...]
    vdd: str = "VDD"
    vss: str = "VSS"

    @property
    def rails(self) -> Tuple[str, str]:
        return (self.vdd, self.vss)

    @property
    def ports(self) -> Tuple[str, ...]:
        return self.inputs + (self.output, self.vdd, self.vss)

    @property
    def internal_nets(self) -> Set[str]:
        nets = set()
        for fet in self.fets:
            nets.update((fet.drain, fet.gate, fet.source))
        return nets - set(self.ports)

    @property
    def base_name(self) -> str:
        match = _DRIVE_SUFFIX.match(self.name)
        return match.group("base") if match else self.name

    @property
    def drive(self) -> int:
        """Drive strength from the X<n> name suffix."""
        match = _DRIVE_SUFFIX.match(self.name)
        if not match:
            raise ValueError(f"cell name '{self.name}' has no X<n> drive-strength suffix")
        return int(match.group("drive"))

    @property
    def total_width(self) -> float:
        return sum(fet.width for fet in self.fets)

    def fets_gated_by(self, net: str) -> List[Transistor]:
        return [fet for fet in self.fets if fet.gate == net]

    def fets_on(self, net: str) -> List[Transistor]:
        return [fet for fet in self.fets if fet.touches(net)]


def _channel_reaches(cell: CellNetlist, start: str, target: str, polarity: Polarity) -> bool:
    """Whether `target` is reachable from `start` through channels of one polarity, gates ignored."""
    rails = set(cell.rails)
    seen = {start}
    frontier = [start]
    while frontier:
        net = frontier.pop()
        for fet in cell.fets:
            if fet.polarity is not polarity or not fet.touches(net):
                continue
            other = fet.source if fet.drain == net else fet.drain
            if other == target:
                return True
            if other in seen or other in rails:
                continue
            seen.add(other)
            frontier.append(other)
    return False


def validate_cell(cell: CellNetlist, lines: Optional[Dict[str, int]] = None) -> CellNetlist:
    """
    Check the structural invariants of a static CMOS cell.

    Args:
        cell: Cell to check.
        lines: Optional FET id -> source line number, used in error messages.

    Returns:
        The cell itself.

    Raises:
        NetlistSyntaxError: For undeclared nets or non-positive widths.
        MalformedCellError: For pin-count or pull-up/pull-down violations.
    """
    lines = lines or {}
    if not 1 <= len(cell.inputs) <= 3:
        raise MalformedCellError(f"{cell.name}: expected 1-3 input pins, got {len(cell.inputs)}")
    if len(set(cell.ports)) != len(cell.ports):
        raise MalformedCellError(f"{cell.name}: duplicate port names {cell.ports}")
    if not cell.fets:
        raise MalformedCellError(f"{cell.name}: no transistors")

    terminal_count: Dict[str, int] = {}
    driven: Set[str] = set()
    for fet in cell.fets:
        for net in fet.channel:
            terminal_count[net] = terminal_count.get(net, 0) + 1
        driven.add(fet.drain)
    ports = set(cell.ports)
    for fet in cell.fets:
        line = lines.get(fet.id, 0)
        if fet.width <= 0:
            raise NetlistSyntaxError(f"M{fet.id}: non-positive width {fet.width:g}", line)
        for role, net in (("drain", fet.drain), ("source", fet.source)):
            if net not in ports and terminal_count[net] < 2:
                raise NetlistSyntaxError(f"M{fet.id}: {role} references undeclared net '{net}'", line)
        if fet.gate not in ports and fet.gate not in driven:
            raise NetlistSyntaxError(f"M{fet.id}: gate references undeclared net '{fet.gate}'", line)
        if fet.gate in (cell.output, cell.vdd, cell.vss):
            raise MalformedCellError(f"{cell.name}: M{fet.id} gate tied to '{fet.gate}'")
        if fet.bulk not in cell.rails:
            raise NetlistSyntaxError(f"M{fet.id}: bulk references undeclared net '{fet.bulk}'", line)

    if not _channel_reaches(cell, cell.output, cell.vdd, Polarity.P):
        raise MalformedCellError(f"{cell.name}: no pull-up path from {cell.output} to {cell.vdd}")
    if not _channel_reaches(cell, cell.output, cell.vss, Polarity.N):
        raise MalformedCellError(f"{cell.name}: no pull-down path from {cell.output} to {cell.vss}")
    return cell


def parse_subckt(text: str) -> CellNetlist:
    """
    Parse one cell from the minimal subckt grammar.

    The grammar is line oriented:
        .subckt <NAME> <in1> [<in2> [<in3>]] <out> VDD VSS
        M<id> <drain> <gate> <source> <bulk> <N|P> W=<float>
        .ends
    Lines starting with '*' are comments.

    Args:
        text: Cell source.

    Returns:
        Validated CellNetlist.

    Raises:
        NetlistSyntaxError: With the offending line number.
    """
    header: Optional[Tuple[str, List[str]]] = None
    fets: List[Transistor] = []
    fet_lines: Dict[str, int] = {}
    ended = False

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("*"):
            continue
        tokens = line.split()
        keyword = tokens[0].lower()
        if ended:
            raise NetlistSyntaxError("content after .ends", number)
        if keyword == ".subckt":
            if header is not None:
                raise NetlistSyntaxError("more than one .subckt definition", number)
            if len(tokens) < 5:
                raise NetlistSyntaxError(".subckt needs a name, inputs, an output and VDD VSS", number)
            ports = tokens[2:]
            if ports[-2:] != ["VDD", "VSS"]:
                raise NetlistSyntaxError("missing rail nets: the last two ports must be VDD VSS", number)
            header = (tokens[1], ports)
        elif keyword == ".ends":
            if header is None:
                raise NetlistSyntaxError(".ends without .subckt", number)
            ended = True
        elif keyword.startswith("m"):
            if header is None:
                raise NetlistSyntaxError("transistor outside .subckt", number)
            fets.append(_parse_fet_line(tokens, number))
            if fets[-1].id in fet_lines:
                raise NetlistSyntaxError(f"duplicate transistor id M{fets[-1].id}", number)
            fet_lines[fets[-1].id] = number
        else:
            raise NetlistSyntaxError(f"unexpected statement '{tokens[0]}'", number)

    if header is None:
        raise NetlistSyntaxError("no .subckt definition found")
    if not ended:
        raise NetlistSyntaxError("missing .ends")

    name, ports = header
    cell = CellNetlist(
        name=name,
        inputs=tuple(ports[:-3]),
        output=ports[-3],
        fets=tuple(fets),
    )
    return validate_cell(cell, fet_lines)


def _parse_fet_line(tokens: Sequence[str], number: int) -> Transistor:
    if len(tokens) != 7:
        raise NetlistSyntaxError(
            "transistor line must be: M<id> <drain> <gate> <source> <bulk> <N|P> W=<float>", number
        )
    name, drain, gate, source, bulk, kind, width_text = tokens
    if len(name) < 2:
        raise NetlistSyntaxError("transistor needs an id after 'M'", number)
    try:
        polarity = Polarity(kind.upper())
    except ValueError:
        raise NetlistSyntaxError(f"transistor type must be N or P, got '{kind}'", number)
    if not width_text.upper().startswith("W="):
        raise NetlistSyntaxError(f"expected W=<float>, got '{width_text}'", number)
    try:
        width = float(width_text[2:])
    except ValueError:
        raise NetlistSyntaxError(f"invalid width '{width_text[2:]}'", number)
    if width <= 0:
        raise NetlistSyntaxError(f"M{name[1:]}: non-positive width {width:g}", number)
    return Transistor(name[1:], polarity, drain, gate, source, bulk, width)


def emit_subckt(cell: CellNetlist) -> str:
    """Write a cell in the subckt grammar read by parse_subckt."""
    lines = [" ".join([".subckt", cell.name, *cell.inputs, cell.output, cell.vdd, cell.vss])]
    for fet in cell.fets:
        lines.append(
            f"M{fet.id} {fet.drain} {fet.gate} {fet.source} {fet.bulk} {fet.polarity.value} W={fet.width:.6g}"
        )
    lines.append(".ends")
    return "\n".join(lines) + "\n"


def last_stage(cell: CellNetlist) -> Tuple[Transistor, ...]:
    """
    FETs of the output stage: channel-connected to the output net.

    Starts from every FET with drain or source on the output and follows
    series stacks through internal nets, stopping at the rails.

    Raises:
        MalformedCellError: If no FET touches the output.
    """
    rails = set(cell.rails)
    stage: List[Transistor] = []
    seen_nets = {cell.output}
    frontier = [cell.output]
    while frontier:
        net = frontier.pop()
        for fet in cell.fets:
            if fet in stage or not fet.touches(net):
                continue
            stage.append(fet)
            other = fet.source if fet.drain == net else fet.drain
            if other not in rails and other not in seen_nets:
                seen_nets.add(other)
                frontier.append(other)
    if not stage:
        raise MalformedCellError(f"{cell.name}: cannot identify a last stage (no FET on {cell.output})")
    order = {fet.id: i for i, fet in enumerate(cell.fets)}
    return tuple(sorted(stage, key=lambda f: order[f.id]))


def scale_drive(cell: CellNetlist, multiple: int) -> CellNetlist:
    """
    Derive a new drive strength by scaling the last-stage widths.

    Args:
        cell: Source cell with an X<n> suffix.
        multiple: Target drive strength (>= 1).

    Returns:
        New cell named <base>X<multiple> whose last-stage widths are
        multiple x the X1 widths; earlier stages are unchanged.
    """
    if int(multiple) != multiple or multiple < 1:
        raise ValueError(f"drive multiple must be a positive integer, got {multiple}")
    factor = multiple / cell.drive
    stage_ids = {fet.id for fet in last_stage(cell)}
    fets = tuple(
        replace(fet, width=fet.width * factor) if fet.id in stage_ids else fet
        for fet in cell.fets
    )
    return replace(cell, name=f"{cell.base_name}X{int(multiple)}", fets=fets)


# --- Default catalog -------------------------------------------------------


class _CellBuilder:
    """Accumulates FETs for one cell; X1 widths are NFET 1.0 and PFET 2.0 per stage."""

    def __init__(self, name: str, inputs: Sequence[str], output: str = "Y"):
        self.name = name
        self.inputs = tuple(inputs)
        self.output = output
        self.fets: List[Transistor] = []
        self._nets = 0

    def net(self) -> str:
        self._nets += 1
        return f"n{self._nets}"

    def pfet(self, drain: str, gate: str, source: str, width: float) -> None:
        self.fets.append(Transistor(str(len(self.fets) + 1), Polarity.P, drain, gate, source, "VDD", float(width)))

    def nfet(self, drain: str, gate: str, source: str, width: float) -> None:
        self.fets.append(Transistor(str(len(self.fets) + 1), Polarity.N, drain, gate, source, "VSS", float(width)))

    def inverter(self, inp: str, out: str, drive: int) -> None:
        self.pfet(out, inp, "VDD", 2 * drive)
        self.nfet(out, inp, "VSS", drive)

    def nand(self, ins: Sequence[str], out: str, drive: int) -> None:
        k = len(ins)
        for inp in ins:
            self.pfet(out, inp, "VDD", 2 * drive)
        mids = [self.net() for _ in range(k - 1)]
        for i, inp in enumerate(ins):
            drain = out if i == 0 else mids[i - 1]
            source = "VSS" if i == k - 1 else mids[i]
            self.nfet(drain, inp, source, k * drive)

    def nor(self, ins: Sequence[str], out: str, drive: int) -> None:
        k = len(ins)
        mids = [self.net() for _ in range(k - 1)]
        for i, inp in enumerate(ins):
            source = "VDD" if i == 0 else mids[i - 1]
            drain = out if i == k - 1 else mids[i]
            self.pfet(drain, inp, source, 2 * k * drive)
        for inp in ins:
            self.nfet(out, inp, "VSS", drive)

    def aoi21(self, a: str, b: str, c: str, out: str, drive: int) -> None:
        top = self.net()
        self.pfet(top, c, "VDD", 4 * drive)
        self.pfet(out, a, top, 4 * drive)
        self.pfet(out, b, top, 4 * drive)
        mid = self.net()
        self.nfet(out, a, mid, 2 * drive)
        self.nfet(mid, b, "VSS", 2 * drive)
        self.nfet(out, c, "VSS", drive)

    def oai21(self, a: str, b: str, c: str, out: str, drive: int) -> None:
        top = self.net()
        self.pfet(top, a, "VDD", 4 * drive)
        self.pfet(out, b, top, 4 * drive)
        self.pfet(out, c, "VDD", 2 * drive)
        mid = self.net()
        self.nfet(out, a, mid, 2 * drive)
        self.nfet(out, b, mid, 2 * drive)
        self.nfet(mid, c, "VSS", 2 * drive)

    def aoi22(self, first: Tuple[str, str], second: Tuple[str, str], out: str, drive: int) -> None:
        top = self.net()
        for gate in first:
            self.pfet(top, gate, "VDD", 4 * drive)
        for gate in second:
            self.pfet(out, gate, top, 4 * drive)
        for x, y in (first, second):
            mid = self.net()
            self.nfet(out, x, mid, 2 * drive)
            self.nfet(mid, y, "VSS", 2 * drive)

    def build(self) -> CellNetlist:
        cell = CellNetlist(self.name, self.inputs, self.output, tuple(self.fets))
        return validate_cell(cell)


def _inv(drive: int) -> CellNetlist:
    b = _CellBuilder(f"INVX{drive}", ["A"])
    b.inverter("A", "Y", drive)
    return b.build()


def _buf(drive: int) -> CellNetlist:
    b = _CellBuilder(f"BUFX{drive}", ["A"])
    n = b.net()
    b.inverter("A", n, 1)
    b.inverter(n, "Y", drive)
    return b.build()


def _simple(kind: str, n_inputs: int, drive: int) -> CellNetlist:
    pins = ["A", "B", "C"][:n_inputs]
    b = _CellBuilder(f"{kind}{n_inputs}X{drive}", pins)
    if kind in ("NAND", "NOR"):
        getattr(b, kind.lower())(pins, "Y", drive)
    else:
        n = b.net()
        (b.nand if kind == "AND" else b.nor)(pins, n, 1)
        b.inverter(n, "Y", drive)
    return b.build()


def _aoi21(drive: int) -> CellNetlist:
    b = _CellBuilder(f"AOI21X{drive}", ["A", "B", "C"])
    b.aoi21("A", "B", "C", "Y", drive)
    return b.build()


def _oai21(drive: int) -> CellNetlist:
    b = _CellBuilder(f"OAI21X{drive}", ["A", "B", "C"])
    b.oai21("A", "B", "C", "Y", drive)
    return b.build()


def _mx2(drive: int) -> CellNetlist:
    # Y = S ? B : A, as an inverted AOI22 mux followed by an output inverter.
    b = _CellBuilder(f"MX2X{drive}", ["A", "B", "S"])
    s_n = b.net()
    b.inverter("S", s_n, 1)
    y_n = b.net()
    b.aoi22(("A", s_n), ("B", "S"), y_n, 1)
    b.inverter(y_n, "Y", drive)
    return b.build()


def _xor(kind: str, drive: int) -> CellNetlist:
    b = _CellBuilder(f"{kind}2X{drive}", ["A", "B"])
    a_n, b_n = b.net(), b.net()
    b.inverter("A", a_n, 1)
    b.inverter("B", b_n, 1)
    if kind == "XOR":
        b.aoi22(("A", "B"), (a_n, b_n), "Y", drive)
    else:
        b.aoi22(("A", b_n), (a_n, "B"), "Y", drive)
    return b.build()


# Family -> drive strengths of the default library.
DEFAULT_DRIVES = {
    "AND2": (1, 2, 4),
    "OR2": (1, 2, 4),
    "NAND2": (1, 2, 4),
    "NOR2": (1, 2, 4),
    "AND3": (1,),
    "OR3": (1,),
    "NAND3": (1,),
    "NOR3": (1,),
    "AOI21": (1,),
    "OAI21": (1,),
    "MX2": (1, 2),
    "XOR2": (1, 2),
    "XNOR2": (1, 2),
    "INV": (1, 2, 4, 8, 16),
    "BUF": (2, 4, 8, 16),
}


def build_family_cell(family: str, drive: int) -> CellNetlist:
    """Hand-construct one catalog topology at a given drive strength."""
    if family == "INV":
        return _inv(drive)
    if family == "BUF":
        return _buf(drive)
    if family in ("AOI21", "OAI21"):
        return (_aoi21 if family == "AOI21" else _oai21)(drive)
    if family == "MX2":
        return _mx2(drive)
    if family in ("XOR2", "XNOR2"):
        return _xor(family[:-1], drive)
    match = re.match(r"^(AND|OR|NAND|NOR)([23])$", family)
    if match:
        return _simple(match.group(1), int(match.group(2)), drive)
    raise ValueError(f"unknown cell family '{family}'")


@dataclass
class CellCatalog:
    """Named collection of cells for one technology, in insertion order."""

    technology: Technology
    cells: Dict[str, CellNetlist] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self) -> Iterator[CellNetlist]:
        return iter(self.cells.values())

    def __contains__(self, name: object) -> bool:
        return name in self.cells

    def __getitem__(self, name: str) -> CellNetlist:
        try:
            return self.cells[name]
        except KeyError:
            raise DataError(f"cell '{name}' is not in the catalog")

    def names(self) -> List[str]:
        return list(self.cells)

    def subset(self, names: Iterable[str]) -> "CellCatalog":
        """Catalog restricted to `names`, in the order given."""
        return CellCatalog(self.technology, {name: self[name] for name in names})

    def extended(self, cells: Iterable[CellNetlist]) -> "CellCatalog":
        """Catalog with extra cells appended; names must stay unique."""
        merged = dict(self.cells)
        for cell in cells:
            if cell.name in merged:
                raise DataError(f"cell '{cell.name}' already exists in the catalog")
            merged[cell.name] = cell
        return CellCatalog(self.technology, merged)


def build_default_catalog(technology: "str | Technology" = Technology.SILICON45) -> CellCatalog:
    """
    Build the 33-cell combinational library.

    The topologies are technology independent; the tag only travels with
    the catalog so downstream steps pick the right ranges.
    """
    catalog = CellCatalog(Technology.parse(technology))
    for family, drives in DEFAULT_DRIVES.items():
        for drive in drives:
            cell = build_family_cell(family, drive)
            catalog.cells[cell.name] = cell
    return catalog


def load_catalog(path: "str | Path", technology: "str | Technology") -> CellCatalog:
    """
    Load every '*.sp' cell source from a directory, sorted by file name.

    Raises:
        DataError: If the directory holds no cell sources or names repeat.
    """
    directory = Path(path)
    files = sorted(directory.glob("*.sp"))
    if not files:
        raise DataError(f"no '*.sp' cell sources in {directory}")
    catalog = CellCatalog(Technology.parse(technology))
    for file in files:
        try:
            cell = parse_subckt(file.read_text(encoding="utf-8"))
        except NetlistSyntaxError as exc:
            raise NetlistSyntaxError(f"{file.name}: {exc}")
        if cell.name in catalog:
            raise DataError(f"duplicate cell name '{cell.name}' in {file.name}")
        catalog.cells[cell.name] = cell
    return catalog


def write_catalog(catalog: CellCatalog, path: "str | Path") -> List[Path]:
    """Write one '<NAME>.sp' file per cell; returns the written paths."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for cell in catalog:
        target = directory / f"{cell.name}.sp"
        target.write_text(emit_subckt(cell), encoding="utf-8")
        written.append(target)
    return written
