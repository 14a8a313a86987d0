# ABOUTME: Deterministic gate-level benchmark generators: chains, ripple-carry adders, a 4x4 multiplier, random DAGs.
# ABOUTME: Every benchmark is a GateNetlist and can be written out in the gate-list text format.

import re
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from cellgnn.errors import GateNetlistError
from cellgnn.sta import Gate, GateNetlist, parse_gatelist
from cellgnn.technology import Technology

# Shipped benchmark names used by the system-level comparison.
BUNDLED = ["inv-chain-32", "rca8", "rca16", "mult4x4", "rand-dag-1", "rand-dag-2", "rand-dag-3"]

# Technology -> (period, PI slew, PO load); times in the technology unit, loads in fF.
DEFAULT_CONSTRAINTS: Dict[Technology, Tuple[float, float, float]] = {
    Technology.SILICON45: (2000.0, 20.0, 2.0),
    Technology.FLEXIBLE: (2000.0, 5.0, 10.0),
}

_RANDOM_CELLS = ("INVX1", "NAND2X1", "NOR2X1", "AND2X1", "OR2X1", "XOR2X1", "AOI21X1", "OAI21X1")
_ARITY = {"INVX1": 1, "AOI21X1": 3, "OAI21X1": 3}


class _Builder:
    """Accumulates gates with generated instance and net names."""

    def __init__(self, name: str):
        self.name = name
        self.gates: List[Gate] = []
        self._nets = 0

    def gate(self, cell: str, *inputs: str, out: str = "") -> str:
        if not out:
            self._nets += 1
            out = f"n{self._nets}"
        self.gates.append(Gate(f"g{len(self.gates) + 1}", cell, out, tuple(inputs)))
        return out

    def half_adder(self, a: str, b: str) -> Tuple[str, str]:
        return self.gate("XOR2X1", a, b), self.gate("AND2X1", a, b)

    def full_adder(self, a: str, b: str, cin: str) -> Tuple[str, str]:
        """Five-gate full adder; returns (sum, carry)."""
        p = self.gate("XOR2X1", a, b)
        s = self.gate("XOR2X1", p, cin)
        g = self.gate("AND2X1", a, b)
        t = self.gate("AND2X1", p, cin)
        return s, self.gate("OR2X1", g, t)

    def netlist(self, inputs: Sequence[str], outputs: Sequence[str], technology: Technology) -> GateNetlist:
        period, slew, load = DEFAULT_CONSTRAINTS[technology]
        return GateNetlist(
            gates=list(self.gates),
            inputs=tuple(inputs),
            outputs=tuple(outputs),
            period=period,
            input_slew={"*": slew},
            output_load={"*": load},
            name=self.name,
        )


def inv_chain(n: int, technology: Technology = Technology.SILICON45) -> GateNetlist:
    """n INVX1 in series from input 'a'."""
    return _chain("INVX1", f"inv-chain-{n}", n, technology)


def buf_chain(n: int, technology: Technology = Technology.SILICON45) -> GateNetlist:
    return _chain("BUFX2", f"buf-chain-{n}", n, technology)


def _chain(cell: str, name: str, n: int, technology: Technology) -> GateNetlist:
    if n < 1:
        raise ValueError(f"chain length must be at least 1, got {n}")
    b = _Builder(name)
    net = "a"
    for _ in range(n):
        net = b.gate(cell, net)
    return b.netlist(["a"], [net], technology)


def ripple_carry_adder(bits: int, technology: Technology = Technology.SILICON45) -> GateNetlist:
    """
    Ripple-carry adder of `bits` full-adder slices, five gates each.

    Inputs a0.., b0.. and cin; outputs are the sum nets, LSB first, then the carry-out.
    """
    if bits < 1:
        raise ValueError(f"adder width must be at least 1, got {bits}")
    b = _Builder(f"rca{bits}")
    carry = "cin"
    sums = []
    for i in range(bits):
        s, carry = b.full_adder(f"a{i}", f"b{i}", carry)
        sums.append(s)
    inputs = [f"a{i}" for i in range(bits)] + [f"b{i}" for i in range(bits)] + ["cin"]
    return b.netlist(inputs, sums + [carry], technology)


def multiplier_4x4(technology: Technology = Technology.SILICON45) -> GateNetlist:
    """
    4x4 unsigned multiplier: 16 AND2 partial products reduced column by column.

    Each column is compressed with full adders while it holds three or more
    bits and a half adder when two remain; carries move to the next column.
    """
    b = _Builder("mult4x4")
    columns: List[List[str]] = [[] for _ in range(8)]
    for i in range(4):
        for j in range(4):
            columns[i + j].append(b.gate("AND2X1", f"a{i}", f"b{j}"))
    products = []
    for k in range(len(columns)):
        column = columns[k]
        while len(column) > 1:
            if len(column) >= 3:
                s, c = b.full_adder(column.pop(0), column.pop(0), column.pop(0))
            else:
                s, c = b.half_adder(column.pop(0), column.pop(0))
            column.append(s)
            if k + 1 == len(columns):
                columns.append([])
            columns[k + 1].append(c)
        if column:
            products.append(column[0])
    inputs = [f"a{i}" for i in range(4)] + [f"b{j}" for j in range(4)]
    return b.netlist(inputs, products, technology)


def random_dag(
    seed: int,
    n_inputs: int = 8,
    n_gates: int = 48,
    technology: Technology = Technology.SILICON45,
) -> GateNetlist:
    """
    Seeded random combinational DAG over X1 cells.

    Gate inputs are drawn from primary inputs and earlier gate outputs,
    favoring recent nets so the logic depth grows. Every net without fanout
    becomes a primary output.
    """
    rng = np.random.default_rng(seed)
    b = _Builder(f"rand-dag-{seed}")
    nets = [f"i{k}" for k in range(n_inputs)]
    used = set()
    for _ in range(n_gates):
        cell = _RANDOM_CELLS[int(rng.integers(len(_RANDOM_CELLS)))]
        arity = _ARITY.get(cell, 2)
        weights = np.arange(1, len(nets) + 1, dtype=float)
        picks = rng.choice(len(nets), size=arity, replace=False, p=weights / weights.sum())
        ins = [nets[int(k)] for k in picks]
        used.update(ins)
        nets.append(b.gate(cell, *ins))
    outputs = [g.output for g in b.gates if g.output not in used]
    return b.netlist(nets[:n_inputs], outputs, technology)


def benchmark(name: str, technology: "str | Technology" = Technology.SILICON45) -> GateNetlist:
    """
    Build a bundled benchmark by name.

    Args:
        name: 'inv-chain-<n>', 'buf-chain-<n>', 'rca<n>', 'mult4x4' or 'rand-dag-<seed>'.
        technology: Technology whose default constraints are attached.

    Raises:
        ValueError: If the name matches no generator.
    """
    technology = Technology.parse(technology)
    match = re.fullmatch(r"(inv|buf)-chain-(\d+)", name)
    if match:
        return (inv_chain if match.group(1) == "inv" else buf_chain)(int(match.group(2)), technology)
    match = re.fullmatch(r"rca(\d+)", name)
    if match:
        return ripple_carry_adder(int(match.group(1)), technology)
    if name == "mult4x4":
        return multiplier_4x4(technology)
    match = re.fullmatch(r"rand-dag-(\d+)", name)
    if match:
        return random_dag(int(match.group(1)), technology=technology)
    raise ValueError(f"unknown benchmark '{name}'")


def load_netlist(source: str, technology: "str | Technology", known_cells=None) -> GateNetlist:
    """Resolve a CLI netlist argument: a bundled benchmark name or a gate-list file path."""
    technology = Technology.parse(technology)
    try:
        return benchmark(source, technology)
    except ValueError:
        pass
    path = Path(source)
    if not path.exists():
        raise GateNetlistError(f"'{source}' is neither a bundled benchmark nor a file")
    return parse_gatelist(path.read_text(), known_cells=known_cells, name=path.stem)
