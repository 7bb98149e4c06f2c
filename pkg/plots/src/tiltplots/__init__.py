from .spec import PlotSpec, PlotError, load_spec
from .render import band_stats, read_comparison, read_telemetry, render

__version__ = "0.1.0"
