# ABOUTME: Unit tests for transistor-level cell netlists and the default catalog.
# ABOUTME: Tests subckt parsing and writing, structural validation, drive scaling, and catalog files.

import pytest

from cellgnn.errors import DataError, MalformedCellError, NetlistSyntaxError
from cellgnn.netlist import (
    DEFAULT_DRIVES,
    CellCatalog,
    Polarity,
    build_family_cell,
    emit_subckt,
    last_stage,
    load_catalog,
    parse_subckt,
    scale_drive,
    write_catalog,
)


class TestDefaultCatalog:
    """Tests for the hand-built 33-cell catalog."""

    def test_catalog_has_33_cells(self, catalog):
        assert len(catalog) == 33
        assert sum(len(drives) for drives in DEFAULT_DRIVES.values()) == 33

    def test_inverter_widths(self, catalog):
        """X1 inverters use PFET width 2 and NFET width 1."""
        inv = catalog["INVX1"]
        widths = {fet.polarity: fet.width for fet in inv.fets}
        assert widths == {Polarity.P: 2.0, Polarity.N: 1.0}

    def test_drive_and_base_name(self, catalog):
        cell = catalog["NAND2X4"]
        assert cell.drive == 4
        assert cell.base_name == "NAND2"

    def test_unknown_cell_raises(self, catalog):
        with pytest.raises(DataError, match="FOO"):
            catalog["FOOX1"]

    def test_unknown_family_raises(self):
        with pytest.raises(ValueError):
            build_family_cell("NAND4", 1)

    def test_subset_keeps_order(self, catalog):
        subset = catalog.subset(["NOR2X1", "INVX1"])
        assert subset.names() == ["NOR2X1", "INVX1"]

    def test_extended_rejects_duplicates(self, catalog):
        with pytest.raises(DataError, match="already exists"):
            catalog.extended([catalog["INVX1"]])


class TestParseSubckt:
    """Tests for the minimal subckt grammar."""

    def test_emit_then_parse_recovers_every_catalog_cell(self, catalog):
        """Writing and re-reading each catalog cell gives an equal cell."""
        for cell in catalog:
            assert parse_subckt(emit_subckt(cell)) == cell

    def test_parses_ports_and_comments(self, inverter_text):
        cell = parse_subckt(inverter_text)
        assert cell.name == "INVX1"
        assert cell.inputs == ("A",)
        assert cell.output == "Y"
        assert len(cell.fets) == 2

    def test_bad_width_reports_line(self):
        """A non-numeric width is reported with its line number."""
        text = ".subckt INVX1 A Y VDD VSS\nMP1 Y A VDD VDD P W=abc\nMN1 Y A VSS VSS N W=1\n.ends\n"
        with pytest.raises(NetlistSyntaxError) as info:
            parse_subckt(text)
        assert info.value.line == 2

    def test_missing_ends(self):
        with pytest.raises(NetlistSyntaxError, match=".ends"):
            parse_subckt(".subckt INVX1 A Y VDD VSS\nMP1 Y A VDD VDD P W=2\nMN1 Y A VSS VSS N W=1\n")

    def test_missing_rails(self):
        with pytest.raises(NetlistSyntaxError, match="rail"):
            parse_subckt(".subckt INVX1 A Y VDD GND\nMP1 Y A VDD VDD P W=2\n.ends\n")

    def test_undeclared_net(self):
        """A channel ending on a net nothing else touches is undeclared."""
        text = ".subckt INVX1 A Y VDD VSS\nMP1 Y A VDD VDD P W=2\nMN1 Y A n9 VSS N W=1\n.ends\n"
        with pytest.raises(NetlistSyntaxError, match="n9"):
            parse_subckt(text)

    def test_missing_pull_down(self):
        """A cell whose output cannot reach VSS is malformed."""
        text = ".subckt BADX1 A Y VDD VSS\nMP1 Y A VDD VDD P W=2\n.ends\n"
        with pytest.raises(MalformedCellError, match="pull-down"):
            parse_subckt(text)

    def test_too_many_inputs(self):
        text = (
            ".subckt BIGX1 A B C D Y VDD VSS\n"
            "MP1 Y A VDD VDD P W=2\nMP2 Y B VDD VDD P W=2\nMP3 Y C VDD VDD P W=2\nMP4 Y D VDD VDD P W=2\n"
            "MN1 Y A VSS VSS N W=1\nMN2 Y B VSS VSS N W=1\nMN3 Y C VSS VSS N W=1\nMN4 Y D VSS VSS N W=1\n"
            ".ends\n"
        )
        with pytest.raises(MalformedCellError, match="1-3 input"):
            parse_subckt(text)


class TestScaleDrive:
    """Tests for deriving new drive strengths."""

    def test_scale_inverter(self, catalog):
        """INVX3 has three times the X1 widths."""
        inv3 = scale_drive(catalog["INVX1"], 3)
        assert inv3.name == "INVX3"
        assert sorted(fet.width for fet in inv3.fets) == [3.0, 6.0]

    def test_scale_buffer_keeps_first_stage(self, catalog):
        """Only the output stage of a buffer is resized; X3 is 1.5x the X2 stage."""
        buf3 = scale_drive(catalog["BUFX2"], 3)
        stage = {fet.id for fet in last_stage(buf3)}
        for fet, original in zip(buf3.fets, catalog["BUFX2"].fets):
            if fet.id in stage:
                assert fet.width == pytest.approx(original.width * 1.5)
            else:
                assert fet.width == original.width

    def test_scaled_cell_matches_built_cell(self, catalog):
        """Scaling NAND2X1 to X4 reproduces the hand-built NAND2X4."""
        assert scale_drive(catalog["NAND2X1"], 4).fets == catalog["NAND2X4"].fets

    def test_rejects_fractional_multiple(self, catalog):
        with pytest.raises(ValueError):
            scale_drive(catalog["INVX1"], 2.5)


class TestCatalogFiles:
    """Tests for catalog directories of .sp files."""

    def test_write_then_load(self, catalog, tmp_path):
        subset = catalog.subset(["NAND2X1", "INVX1"])
        paths = write_catalog(subset, tmp_path)
        assert [p.name for p in paths] == ["NAND2X1.sp", "INVX1.sp"]
        loaded = load_catalog(tmp_path, "silicon45")
        assert loaded.names() == ["INVX1", "NAND2X1"]
        assert loaded["NAND2X1"] == catalog["NAND2X1"]

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DataError, match="no"):
            load_catalog(tmp_path, "silicon45")

    def test_syntax_error_names_file(self, tmp_path):
        (tmp_path / "BAD.sp").write_text(".subckt BAD A Y VDD VSS\n")
        with pytest.raises(NetlistSyntaxError, match="BAD.sp"):
            load_catalog(tmp_path, "silicon45")

    def test_catalog_is_iterable(self, catalog):
        assert isinstance(catalog, CellCatalog)
        assert [c.name for c in catalog][:3] == ["AND2X1", "AND2X2", "AND2X4"]


@pytest.fixture
def inverter_text():
    """Hand-written inverter source with a comment line."""
    return (
        "* plain inverter\n"
        ".subckt INVX1 A Y VDD VSS\n"
        "MP1 Y A VDD VDD P W=2\n"
        "MN1 Y A VSS VSS N W=1\n"
        ".ends\n"
    )
