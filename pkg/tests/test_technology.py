# ABOUTME: Unit tests for technology tags, their variable ranges, and corners.
# ABOUTME: Tests tag parsing, range validation, labels, and the reference corners.

import pytest

from cellgnn.errors import ConfigError
from cellgnn.technology import Corner, Technology, nominal_corner, ranges_for, system_eval_corner


class TestTechnology:
    """Tests for technology tag parsing and ranges."""

    def test_parse_is_case_insensitive(self):
        """Tags are matched without regard to case or padding."""
        assert Technology.parse(" SILICON45 ") is Technology.SILICON45

    def test_parse_unknown_tag(self):
        """Unknown tags raise a ConfigError listing the known ones."""
        with pytest.raises(ConfigError, match="silicon45"):
            Technology.parse("gaas")

    def test_silicon_ranges(self):
        """Silicon ranges cover the characterized Vdd, Vth, temperature, slew and load spans."""
        r = ranges_for("silicon45")
        assert r.vdd == (0.9, 1.1)
        assert r.vth == (0.1, 0.5)
        assert r.third_axis == (20.0, 120.0)
        assert r.slew == (5.0, 950.0)
        assert r.load == (0.25, 25.0)
        assert r.time_unit == "ps"

    def test_flexible_ranges(self):
        r = ranges_for(Technology.FLEXIBLE)
        assert r.vdd == (0.5, 2.5)
        assert r.third_axis_name == "cox"
        assert r.time_unit == "ns"


class TestCorner:
    """Tests for the Corner value type."""

    def test_validate_accepts_endpoints(self):
        """Range endpoints are valid corners."""
        Corner(Technology.SILICON45, 0.9, 0.5, 120.0).validate()

    def test_validate_names_offending_axis(self):
        """Out-of-range corners name the axis in the message."""
        with pytest.raises(ConfigError, match="vdd"):
            Corner(Technology.SILICON45, 1.5, 0.3, 25.0).validate()
        with pytest.raises(ConfigError, match="cox"):
            Corner(Technology.FLEXIBLE, 1.0, 0.5, 10.0).validate()

    def test_label(self):
        corner = Corner(Technology.SILICON45, 1.03, 0.48, 65.0)
        assert corner.label() == "vdd=1.03,vth=0.48,temperature=65"

    def test_from_text(self):
        """Command-line corners are vdd,vth,third."""
        corner = Corner.from_text("flexible", "2.5, 0.7, 90")
        assert corner == Corner(Technology.FLEXIBLE, 2.5, 0.7, 90.0)

    def test_from_text_rejects_bad_input(self):
        with pytest.raises(ConfigError):
            Corner.from_text("silicon45", "1.0,0.3")

    def test_third_axis_meaning(self):
        """Silicon corners carry temperature; flexible ones carry Cox at a fixed 27 C."""
        silicon = Corner(Technology.SILICON45, 1.0, 0.3, 65.0)
        flexible = Corner(Technology.FLEXIBLE, 2.0, 0.7, 100.0)
        assert silicon.temperature_kelvin == pytest.approx(338.15)
        assert flexible.temperature == 27.0
        assert flexible.cox == 100.0
        with pytest.raises(ValueError):
            silicon.cox


class TestReferenceCorners:
    """Tests for the nominal and system-evaluation corners."""

    def test_nominal_is_midpoint(self):
        corner = nominal_corner("silicon45")
        assert (corner.vdd, corner.vth, corner.third) == pytest.approx((1.0, 0.3, 70.0))

    def test_system_eval_corners(self):
        """Silicon uses the 1.03 V / 0.48 V / 65 C point; flexible runs at 2.5 V."""
        silicon = system_eval_corner("silicon45")
        assert (silicon.vdd, silicon.vth, silicon.third) == (1.03, 0.48, 65.0)
        flexible = system_eval_corner("flexible")
        assert flexible.vdd == 2.5
        assert flexible.vth == pytest.approx(0.7)
        assert flexible.cox == pytest.approx(90.0)
        flexible.validate()
