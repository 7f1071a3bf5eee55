"""Command-line front end, sweeps and trace reports."""
from .evaluation import fxmy_sweep, noise_dial, perception_f1, report_traces, summarize
