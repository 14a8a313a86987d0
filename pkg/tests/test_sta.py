# ABOUTME: Unit tests for gate-level timing, power rollup, and greedy drive sizing.
# ABOUTME: Tests the gate-list format, NLDM arrival propagation, activity-weighted power, PPA scoring, and library comparison.

import dataclasses

import pytest

from cellgnn.benchmarks import inv_chain, ripple_carry_adder
from cellgnn.errors import CoverageError, GateNetlistError
from cellgnn.sta import (
    clock_frequency,
    compare_libraries,
    drive_variants,
    format_gatelist,
    minimum_period,
    net_loads,
    netlist_area,
    parse_gatelist,
    power,
    ppa_improvement,
    size_gates,
    timing,
)


class TestParseGatelist:
    """Tests for the gate-list text format."""

    def test_two_gate_chain_is_ordered(self, chain_text):
        """Gates come out in topological order whatever the declaration order."""
        netlist = parse_gatelist(chain_text, name="chain")
        assert [g.name for g in netlist.gates] == ["g1", "g2"]
        assert netlist.inputs == ("a",)
        assert netlist.outputs == ("y",)
        assert netlist.period == 500.0
        assert netlist.slew_of("a") == 20.0
        assert netlist.load_of("y") == 3.0
        assert netlist.activity_of("n1") == 0.5
        assert netlist.activity_of("y") == 0.2

    def test_format_then_parse(self, chain_text):
        netlist = parse_gatelist(chain_text)
        again = parse_gatelist(format_gatelist(netlist))
        assert again.gates == netlist.gates
        assert again.activity == netlist.activity

    def test_cycle_is_listed(self):
        text = "input a\noutput y\nperiod 100\ngate g1 NAND2X1 x a y\ngate g2 INVX1 y x\n"
        with pytest.raises(GateNetlistError, match="combinational cycle: g1 -> g2 -> g1"):
            parse_gatelist(text)

    def test_multiple_drivers(self):
        text = "input a\noutput y\nperiod 100\ngate g1 INVX1 y a\ngate g2 INVX1 y a\n"
        with pytest.raises(GateNetlistError, match="multiple drivers"):
            parse_gatelist(text)

    def test_unknown_cell(self, chain_text):
        with pytest.raises(GateNetlistError, match="BUFX2"):
            parse_gatelist(chain_text, known_cells=["INVX1"])

    def test_undriven_net(self):
        with pytest.raises(GateNetlistError, match="no driver"):
            parse_gatelist("input a\noutput y\nperiod 100\ngate g1 NAND2X1 y a b\n")

    def test_activity_range(self):
        with pytest.raises(GateNetlistError, match=r"line 4: activity"):
            parse_gatelist("input a\noutput y\nperiod 100\nactivity a 1.5\ngate g1 INVX1 y a\n")

    def test_missing_period(self):
        with pytest.raises(GateNetlistError, match="period"):
            parse_gatelist("input a\noutput y\ngate g1 INVX1 y a\n")

    def test_unknown_statement(self):
        with pytest.raises(GateNetlistError, match="line 2: unknown statement 'wire'"):
            parse_gatelist("input a\nwire w\n")


class TestTiming:
    """Tests for longest-path NLDM timing."""

    def test_single_inverter_hits_table_exactly(self, small_library):
        """At a breakpoint the arrival is the worse of the two table entries."""
        netlist = parse_gatelist("input a\noutput y\nperiod 1000\nslew * 100\nload * 4\ngate g1 INVX1 y a\n")
        report = timing(netlist, small_library)
        arc = small_library.cell("INVX1").timing[0]
        expected = max(arc.cell_rise.values[1, 1], arc.cell_fall.values[1, 1])
        assert report.arrival["y"] == pytest.approx(expected, rel=1e-12)
        assert report.wns == pytest.approx(1000.0 - expected)
        assert report.critical_path == ["g1"]

    def test_loads_sum_fanout_pins(self, small_library):
        netlist = inv_chain(3)
        loads = net_loads(netlist, small_library)
        pin = small_library.cell("INVX1").pin_caps["A"]
        assert loads["n1"] == pytest.approx(pin)
        assert loads["n3"] == pytest.approx(2.0)

    def test_wns_and_critical_path(self, small_library):
        netlist = ripple_carry_adder(4)
        report = timing(netlist, small_library)
        assert report.wns == pytest.approx(netlist.period - max(report.arrival[n] for n in netlist.outputs))
        first = next(g for g in netlist.gates if g.name == report.critical_path[0])
        assert any(net in netlist.inputs for net in first.inputs)
        assert all(value >= 0 for value in report.arrival.values())
        frame = report.to_frame(netlist)
        assert len(frame) == 20
        assert frame["critical"].sum() == len(report.critical_path)

    def test_larger_output_load_never_helps(self, small_library):
        base = inv_chain(4)
        heavy = dataclasses.replace(base, output_load={"*": 20.0})
        assert timing(heavy, small_library).wns <= timing(base, small_library).wns

    def test_missing_cell(self, small_library):
        netlist = parse_gatelist("input a\noutput y\nperiod 100\ngate g1 FOOX1 y a\n")
        with pytest.raises(CoverageError, match="FOOX1"):
            timing(netlist, small_library)


class TestPower:
    """Tests for the leakage and dynamic power rollup."""

    def test_zero_activity(self, small_library):
        netlist = dataclasses.replace(ripple_carry_adder(2), activity={"*": 0.0})
        report = power(netlist, small_library, 1e9)
        assert report.dynamic_total == 0.0
        assert report.leakage_total > 0

    def test_single_inverter_by_hand(self, small_library):
        """Activity 1 at 1 GHz: dynamic uW equals the mean flip energy in fJ."""
        netlist = parse_gatelist(
            "input a\noutput y\nperiod 1000\nslew * 100\nload * 4\nactivity * 1\ngate g1 INVX1 y a\n"
        )
        arc = small_library.cell("INVX1").timing[0]
        energy = (arc.rise_power.values[1, 1] + arc.fall_power.values[1, 1]) / 2
        report = power(netlist, small_library, 1e9)
        assert report.dynamic_total == pytest.approx(energy)
        assert report.leakage_total == pytest.approx(small_library.cell("INVX1").leakage_average)

    def test_doubling_frequency(self, small_library):
        netlist = ripple_carry_adder(2)
        once = power(netlist, small_library, 5e8)
        twice = power(netlist, small_library, 1e9)
        assert twice.dynamic_total == pytest.approx(2 * once.dynamic_total, rel=1e-12)
        assert twice.leakage_total == once.leakage_total

    def test_totals_equal_parts(self, small_library):
        report = power(ripple_carry_adder(2), small_library, 1e9)
        assert report.per_gate["dynamic_uw"].sum() == pytest.approx(report.dynamic_total)
        assert list(report.per_gate.columns) == ["gate", "cell", "leakage_nw", "dynamic_uw"]

    def test_negative_frequency(self, small_library):
        with pytest.raises(ValueError):
            power(inv_chain(1), small_library, -1.0)

    def test_clock_frequency(self, small_library):
        assert clock_frequency(1000.0, small_library) == pytest.approx(1e9)


class TestSizing:
    """Tests for PPA scoring and greedy drive selection."""

    def test_ppa_improvement(self):
        assert ppa_improvement((10.0, 5.0), (10.0, 5.0)) == 0.0
        assert ppa_improvement((1.0, 1.0), (0.99, 0.98)) == pytest.approx(3.0)
        assert ppa_improvement((1.0, 1.0), (1.02, 1.0)) == pytest.approx(-2.0)

    def test_ppa_rejects_zero_origin(self):
        with pytest.raises(ValueError):
            ppa_improvement((0.0, 1.0), (1.0, 1.0))

    def test_drive_variants(self, small_library):
        variants = drive_variants(small_library)
        assert variants["INV"] == [(1, "INVX1"), (2, "INVX2"), (4, "INVX4"), (8, "INVX8"), (16, "INVX16")]
        assert [d for d, _ in variants["BUF"]] == [2, 4, 8, 16]

    def test_relaxed_period_is_no_op(self, small_library):
        """An all-X1 chain that already meets timing keeps every gate."""
        netlist = inv_chain(4)
        result = size_gates(netlist, small_library, period=1e6)
        assert result.met
        assert result.upsizes == 0
        assert result.assignment == netlist.cells()
        assert result.area_after == result.area_before

    def test_tight_period_upsizes(self, small_library, heavy_chain):
        """Between the all-X1 arrival and the minimum period, sizing meets timing with more area."""
        slow = timing(heavy_chain, small_library).max_arrival
        fastest = minimum_period(heavy_chain, small_library)
        assert fastest < slow
        result = size_gates(heavy_chain, small_library, period=(fastest + slow) / 2)
        assert result.met
        assert result.wns_after >= 0
        assert result.upsizes > 0
        assert result.area_after > netlist_area(heavy_chain, small_library)
        print(f"\nMinimum period {fastest:.1f} ps, all-X1 arrival {slow:.1f} ps")

    def test_unmeetable_period_is_flagged(self, small_library, heavy_chain):
        result = size_gates(heavy_chain, small_library, period=1.0)
        assert not result.met
        assert result.wns_after < 0
        assert result.downsizes == 0

    def test_downsizing_recovers_oversized_gates(self, small_library):
        """Gates that start at X4 are brought back down when timing is loose."""
        netlist = inv_chain(3).with_cells({"g1": "INVX4", "g2": "INVX4", "g3": "INVX4"})
        result = size_gates(netlist, small_library, period=1e6)
        assert result.downsizes == 6
        assert set(result.assignment.values()) == {"INVX1"}
        assert result.ppa_versus(result) == 0.0


class TestCompareLibraries:
    """Tests for truth-versus-prediction system comparison."""

    def test_identical_libraries(self, small_library):
        netlist = ripple_carry_adder(4)
        comparison = compare_libraries(netlist, small_library, small_library, 1e9)
        row = comparison.as_row()
        assert row["wns_abs_error"] == 0.0
        assert row["leakage_pct_error"] == 0.0
        assert row["dynamic_pct_error"] == 0.0

    def test_coverage_mismatch(self, small_library):
        partial = dataclasses.replace(small_library, cells={"INVX1": small_library.cell("INVX1")})
        with pytest.raises(CoverageError):
            compare_libraries(inv_chain(2), small_library, partial, 1e9)


@pytest.fixture
def chain_text():
    """Inverter then buffer, declared out of order, with constraints and activities."""
    return (
        "# two-stage chain\n"
        "input a\n"
        "output y\n"
        "period 500\n"
        "slew a 20\n"
        "load * 3\n"
        "activity * 0.2\n"
        "activity n1 0.5\n"
        "gate g2 BUFX2 y n1\n"
        "gate g1 INVX1 n1 a  # first stage\n"
    )


@pytest.fixture
def heavy_chain():
    """Six-inverter chain driving a 25 fF output."""
    return dataclasses.replace(inv_chain(6), output_load={"*": 25.0})
