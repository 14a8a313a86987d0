# ABOUTME: Technology tags, their characterization variable ranges, and the Corner type.
# ABOUTME: Shared by graph encoding, the oracle, dataset generation, and library emission.

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from cellgnn.errors import ConfigError


class Technology(str, Enum):
    """Technology tag; the value is the name used in configs and files."""

    SILICON45 = "silicon45"
    FLEXIBLE = "flexible"

    @classmethod
    def parse(cls, value: "str | Technology") -> "Technology":
        """
        Resolve a technology tag from its configuration name.

        Args:
            value: Tag name such as "silicon45" or an existing Technology.

        Returns:
            The matching Technology member.

        Raises:
            ConfigError: If the name is not a known technology.
        """
        if isinstance(value, Technology):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            known = ", ".join(t.value for t in cls)
            raise ConfigError(f"unknown technology '{value}' (expected one of: {known})")


@dataclass(frozen=True)
class TechnologyRanges:
    """Variable ranges a technology is characterized over."""

    vdd: Tuple[float, float]
    vth: Tuple[float, float]
    third_axis: Tuple[float, float]
    third_axis_name: str
    slew: Tuple[float, float]
    load: Tuple[float, float]
    time_unit: str


RANGES = {
    Technology.SILICON45: TechnologyRanges(
        vdd=(0.9, 1.1),
        vth=(0.1, 0.5),
        third_axis=(20.0, 120.0),
        third_axis_name="temperature",
        slew=(5.0, 950.0),
        load=(0.25, 25.0),
        time_unit="ps",
    ),
    Technology.FLEXIBLE: TechnologyRanges(
        vdd=(0.5, 2.5),
        vth=(0.3, 1.1),
        third_axis=(50.0, 130.0),
        third_axis_name="cox",
        slew=(1.0, 100.0),
        load=(0.1, 300.0),
        time_unit="ns",
    ),
}

# Relative slack allowed when checking a corner against its ranges, so that
# grid points produced by linspace never fail on rounding.
_RANGE_TOLERANCE = 1e-9


def ranges_for(technology: "str | Technology") -> TechnologyRanges:
    """Return the variable ranges of a technology."""
    return RANGES[Technology.parse(technology)]


@dataclass(frozen=True)
class Corner:
    """
    One technology parameter point.

    Attributes:
        technology: Technology tag.
        vdd: Supply voltage in V.
        vth: NFET threshold magnitude in V; PFETs use -vth.
        third: Temperature in deg C (silicon45) or Cox in nF/cm^2 (flexible).
    """

    technology: Technology
    vdd: float
    vth: float
    third: float

    @property
    def temperature(self) -> float:
        """Temperature in deg C; flexible corners report the 27 C reference."""
        if self.technology is Technology.FLEXIBLE:
            return 27.0
        return self.third

    @property
    def temperature_kelvin(self) -> float:
        return self.temperature + 273.15

    @property
    def cox(self) -> float:
        """Gate unit capacitance in nF/cm^2 (flexible technology only)."""
        if self.technology is not Technology.FLEXIBLE:
            raise ValueError("cox is only defined for the flexible technology")
        return self.third

    def validate(self) -> "Corner":
        """
        Check the corner against its technology ranges.

        Returns:
            The corner itself, for chaining.

        Raises:
            ConfigError: Naming the first axis that is out of range.
        """
        ranges = RANGES[self.technology]
        axes = (
            ("vdd", self.vdd, ranges.vdd),
            ("vth", self.vth, ranges.vth),
            (ranges.third_axis_name, self.third, ranges.third_axis),
        )
        for name, value, (low, high) in axes:
            tol = _RANGE_TOLERANCE * max(abs(low), abs(high))
            if not (low - tol <= value <= high + tol):
                raise ConfigError(
                    f"corner {name}={value:g} is outside the {self.technology.value} "
                    f"range [{low:g}, {high:g}]"
                )
        return self

    def label(self) -> str:
        """Short stable text form, e.g. 'vdd=1.03,vth=0.48,temperature=65'."""
        name = RANGES[self.technology].third_axis_name
        return f"vdd={self.vdd:.6g},vth={self.vth:.6g},{name}={self.third:.6g}"

    @classmethod
    def from_text(cls, technology: "str | Technology", text: str) -> "Corner":
        """
        Build a corner from 'vdd,vth,third' text as used on the command line.

        Raises:
            ConfigError: If the text does not hold three numbers.
        """
        parts = [p for p in text.replace(" ", "").split(",") if p]
        try:
            vdd, vth, third = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"corner '{text}' must be three comma-separated numbers: vdd,vth,third")
        return cls(Technology.parse(technology), vdd, vth, third)


def nominal_corner(technology: "str | Technology") -> Corner:
    """Corner at the midpoint of every axis."""
    tech = Technology.parse(technology)
    r = RANGES[tech]
    return Corner(
        tech,
        sum(r.vdd) / 2,
        sum(r.vth) / 2,
        sum(r.third_axis) / 2,
    )


def system_eval_corner(technology: "str | Technology") -> Corner:
    """
    Default unseen corner for system-level comparisons.

    Silicon uses Vdd 1.03 V, Vth 0.48 V, 65 C; the flexible technology uses
    its high-supply point (2.5 V) with mid-range Vth and Cox.
    """
    tech = Technology.parse(technology)
    if tech is Technology.SILICON45:
        return Corner(tech, 1.03, 0.48, 65.0)
    r = RANGES[tech]
    return Corner(tech, 2.5, sum(r.vth) / 2, sum(r.third_axis) / 2)
