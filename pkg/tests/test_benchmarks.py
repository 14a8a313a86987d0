# ABOUTME: Unit tests for the bundled gate-level benchmark generators.
# ABOUTME: Tests gate counts, functional correctness by logic simulation, determinism, and netlist loading.

import itertools

import pytest

from cellgnn.benchmarks import (
    BUNDLED,
    benchmark,
    inv_chain,
    load_netlist,
    multiplier_4x4,
    random_dag,
    ripple_carry_adder,
)
from cellgnn.errors import GateNetlistError
from cellgnn.oracle import boolean_function
from cellgnn.sta import format_gatelist, parse_gatelist


def simulate(netlist, catalog, values):
    """Evaluate every gate with its cell's truth table."""
    nets = dict(values)
    for gate in netlist.gates:
        table = boolean_function(catalog[gate.cell])
        nets[gate.output] = table.output(tuple(nets[n] for n in gate.inputs))
    return nets


def bits(value, width):
    return [(value >> i) & 1 for i in range(width)]


def number(nets, names):
    return sum(nets[name] << i for i, name in enumerate(names))


class TestGenerators:
    """Tests for the individual benchmark builders."""

    def test_rca8_has_40_gates(self):
        rca = ripple_carry_adder(8)
        assert len(rca.gates) == 40
        assert len(rca.inputs) == 17
        assert len(rca.outputs) == 9

    def test_adder_adds(self, catalog):
        rca = ripple_carry_adder(8)
        for a, b, cin in [(0, 0, 0), (255, 1, 0), (170, 85, 1), (200, 100, 1)]:
            values = dict(zip([f"a{i}" for i in range(8)], bits(a, 8)))
            values.update(zip([f"b{i}" for i in range(8)], bits(b, 8)))
            values["cin"] = cin
            nets = simulate(rca, catalog, values)
            assert number(nets, rca.outputs) == a + b + cin

    def test_multiplier_multiplies(self, catalog):
        mult = multiplier_4x4()
        assert sum(g.cell == "AND2X1" for g in mult.gates[:16]) == 16
        assert len(mult.outputs) == 8
        for a, b in itertools.product(range(16), repeat=2):
            values = dict(zip([f"a{i}" for i in range(4)], bits(a, 4)))
            values.update(zip([f"b{i}" for i in range(4)], bits(b, 4)))
            assert number(simulate(mult, catalog, values), mult.outputs) == a * b

    def test_inverter_chain(self):
        chain = inv_chain(32)
        assert len(chain.gates) == 32
        assert chain.outputs == ("n32",)
        with pytest.raises(ValueError):
            inv_chain(0)

    def test_random_dag_is_seeded(self):
        first = random_dag(2)
        assert format_gatelist(first) == format_gatelist(random_dag(2))
        assert format_gatelist(first) != format_gatelist(random_dag(3))
        assert len(first.gates) == 48

    def test_random_dag_outputs_have_no_fanout(self):
        dag = random_dag(1)
        fanout = dag.fanout()
        assert dag.outputs
        assert all(net not in fanout for net in dag.outputs)


class TestBundled:
    """Tests for the named benchmark set."""

    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_netlists_are_valid(self, name, catalog):
        """Each bundled netlist survives a write/parse cycle against the default catalog."""
        netlist = benchmark(name)
        again = parse_gatelist(format_gatelist(netlist), known_cells=catalog.names())
        assert [g.name for g in again.gates] == [g.name for g in netlist.gates]

    def test_flexible_constraints(self):
        netlist = benchmark("rca8", "flexible")
        assert netlist.period == 2000.0
        assert netlist.slew_of("a0") == 5.0
        assert netlist.load_of(netlist.outputs[-1]) == 10.0

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown benchmark"):
            benchmark("c6288")

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "tiny.gl"
        path.write_text("input a\noutput y\nperiod 100\ngate g1 INVX1 y a\n")
        netlist = load_netlist(str(path), "silicon45")
        assert netlist.name == "tiny"
        assert len(netlist.gates) == 1

    def test_load_missing(self, tmp_path):
        with pytest.raises(GateNetlistError, match="neither"):
            load_netlist(str(tmp_path / "none.gl"), "silicon45")
