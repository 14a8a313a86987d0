# ABOUTME: Unit tests for the Liberty-subset writer and reader.
# ABOUTME: Tests canonical round trips at several corners, header formatting, and syntax error reporting.

import dataclasses

import numpy as np
import pytest

from cellgnn.errors import DataError, LibertySyntaxError
from cellgnn.libgen import CharLibrary, OracleSource, build_library, library_grid
from cellgnn.liberty import emit_liberty, format_liberty, parse_liberty, parse_liberty_text
from cellgnn.netlist import build_default_catalog
from cellgnn.technology import Corner, Technology


class TestRoundTrip:
    """Tests for emit -> parse -> emit."""

    def test_byte_identical(self, small_library):
        text = format_liberty(small_library)
        assert format_liberty(parse_liberty_text(text)) == text

    def test_cell_leakage_survives_rounding(self, small_library):
        """The emitted cell average is kept as read, not recomputed from rounded states."""
        entry = dataclasses.replace(
            small_library.cell("NAND2X1"),
            leakage={(0, 0): 1.0000049, (0, 1): 1.0000049, (1, 0): 1.0000049, (1, 1): 1.0000149},
        )
        library = dataclasses.replace(small_library, cells={"NAND2X1": entry})
        text = format_liberty(library)
        assert "cell_leakage_power : 1.00001 ;" in text
        parsed = parse_liberty_text(text)
        assert parsed.cell("NAND2X1").leakage_reported == 1.00001
        assert parsed.cell("NAND2X1").leakage_average == pytest.approx(1.0000025)
        assert format_liberty(parsed) == text

    @pytest.mark.parametrize("corner", [
        Corner(Technology.SILICON45, 0.9, 0.1, 20.0),
        Corner(Technology.SILICON45, 1.1, 0.5, 120.0),
        Corner(Technology.FLEXIBLE, 2.5, 0.7, 90.0),
    ])
    def test_values_recovered_at_corners(self, corner, tmp_path):
        catalog = build_default_catalog(corner.technology).subset(["INVX1", "NAND2X2", "AOI21X1", "BUFX4"])
        slews, loads = library_grid(corner.technology)
        library = build_library(OracleSource(), catalog, corner, slews, loads, name="rt")
        path = emit_liberty(library, tmp_path / "rt.lib")
        parsed = parse_liberty(path)

        assert parsed.corner == corner
        assert parsed.technology is corner.technology
        assert list(parsed.cells) == list(library.cells)
        for name, entry in library.cells.items():
            other = parsed.cell(name)
            assert other.function == entry.function
            assert other.pin_caps == pytest.approx(entry.pin_caps, rel=1e-5)
            assert other.leakage == pytest.approx(entry.leakage, rel=1e-5)
            for mine, theirs in zip(entry.timing, other.timing):
                assert (theirs.pin, theirs.side, theirs.sense) == (mine.pin, mine.side, mine.sense)
                for key, table in mine.tables().items():
                    assert np.allclose(theirs.tables()[key].values, table.values, rtol=1e-5, atol=0), key
            for mine, theirs in zip(entry.hidden_power, other.hidden_power):
                assert np.allclose(theirs.rise_power.values, mine.rise_power.values, rtol=1e-5, atol=0)
        assert format_liberty(parsed) == path.read_text()


class TestFormat:
    """Tests for the emitted header and structure."""

    def test_index_formatting(self, catalog, eval_corner):
        slews, loads = library_grid("silicon45")
        library = build_library(OracleSource(), catalog.subset(["INVX1"]), eval_corner, slews, loads)
        text = format_liberty(library)
        assert 'index_1 ("5, 320, 635, 950") ;' in text
        assert 'time_unit : "1ps" ;' in text
        assert "nom_temperature : 65 ;" in text

    def test_flexible_units(self):
        corner = Corner(Technology.FLEXIBLE, 2.5, 0.7, 90.0)
        catalog = build_default_catalog(Technology.FLEXIBLE).subset(["INVX1"])
        library = build_library(OracleSource(), catalog, corner, [1.0, 100.0], [0.1, 300.0])
        text = format_liberty(library)
        assert 'time_unit : "1ns" ;' in text
        assert "nom_cox : 90 ;" in text

    def test_empty_library(self, eval_corner):
        empty = CharLibrary("void", Technology.SILICON45, eval_corner, (1.0, 2.0), (1.0, 2.0))
        with pytest.raises(DataError, match="no cells"):
            format_liberty(empty)


class TestParseErrors:
    """Tests for syntax and subset violations."""

    def test_truncated_file(self, inverter_lib_text):
        with pytest.raises(LibertySyntaxError):
            parse_liberty_text(inverter_lib_text[: len(inverter_lib_text) // 2])

    def test_unsupported_construct_named(self, inverter_lib_text):
        text = inverter_lib_text.replace("cell (INVX1) {\n", "cell (INVX1) {\n    dont_use : true ;\n", 1)
        with pytest.raises(LibertySyntaxError, match="unsupported construct 'dont_use'") as info:
            parse_liberty_text(text)
        assert info.value.line > 0

    def test_unknown_technology(self, inverter_lib_text):
        text = inverter_lib_text.replace('"silicon45"', '"gaas"')
        with pytest.raises(LibertySyntaxError, match="gaas"):
            parse_liberty_text(text)

    def test_comments_ignored(self, inverter_lib_text):
        parsed = parse_liberty_text("/* generated */\n" + inverter_lib_text)
        assert "INVX1" in parsed

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            parse_liberty(tmp_path / "none.lib")


@pytest.fixture
def inverter_lib_text(catalog, eval_corner):
    """Liberty text for a one-inverter library."""
    library = build_library(OracleSource(), catalog.subset(["INVX1"]), eval_corner, [5.0, 950.0], [0.25, 25.0])
    return format_liberty(library)
