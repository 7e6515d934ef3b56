"""Figure generation from popsim CSV outputs.

These scripts render what the simulator recorded; they read the published
snapshot CSV schema and manifest JSON only and never recompute any simulation
quantity.
"""

__version__ = "0.1.0"
