"""Tide estimation from passively logged LTE downlink power metrics.

The toolkit turns antenna-height-diverse RSRP/RSSI/RSRQ logs into water-level
estimates: a two-ray simulator generates verification scenarios, the ingest
pipeline cleans and resamples raw logs, a Morlet wavelet stage extracts the
tide-band activity feature S(b), an online detector flags tide turns and peak
flow, multi-cell fusion makes the feature robust to a misbehaving cell, and a
small tanh network regresses calibrated water level from the engineered
features. The ``tidewave`` CLI chains these stages and records a manifest per
run so every output can be reproduced byte for byte.
"""

__version__ = "0.1.0"

from .util import NumericalError, ValidationError

__all__ = ["NumericalError", "ValidationError", "__version__"]
