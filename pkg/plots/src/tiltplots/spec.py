"""Plot specifications: what to read, which channels, how to aggregate.

A spec is one TOML file.  Figures are artifacts only; nothing computed here
feeds back into the simulation or control code.
"""

from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class PlotError(ValueError):
    pass


VALID_KINDS = ("timeseries", "xy", "bars")
VALID_BANDS = ("none", "std")


@dataclass
class PlotSpec:
    """One figure.

    kind:
      timeseries -- channels vs time from one or more telemetry CSVs; with
                    band = "std" the trials are aggregated into mean +/- 1
                    sample-sigma ribbons.
      xy         -- one channel against another (e.g. p_x vs p_y trajectory).
      bars       -- grouped RMSE bars from a comparison JSON.
    """

    kind: str = "timeseries"
    inputs: list = field(default_factory=list)   # CSV paths (trials) or one JSON
    channels: list = field(default_factory=list)
    band: str = "none"
    output: str = "figure.png"
    title: str = ""
    x_channel: str = "t"
    metric: str = "pos_rmse"     # bars only

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise PlotError(f"unknown plot kind {self.kind!r}")
        if self.band not in VALID_BANDS:
            raise PlotError(f"unknown band mode {self.band!r}")
        if not self.inputs:
            raise PlotError("spec needs at least one input file")
        if self.kind == "timeseries" and not self.channels:
            raise PlotError("timeseries spec needs channels")
        if self.kind == "xy" and len(self.channels) != 2:
            raise PlotError("xy spec needs exactly two channels")


def load_spec(path):
    """Parse a spec TOML; [[figure]] tables give several figures per file."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    tables = doc.get("figure")
    if tables is None:
        tables = [doc]
    specs = []
    for tab in tables:
        unknown = set(tab) - set(PlotSpec.__dataclass_fields__)
        if unknown:
            raise PlotError(f"unknown spec keys: {sorted(unknown)}")
        specs.append(PlotSpec(**tab))
    return specs
