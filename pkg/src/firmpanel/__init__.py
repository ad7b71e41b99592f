"""Firm-level financial statements panel: registry, statements, checks, geocoding."""

from .model import (
    Address,
    EligibilityDecision,
    Exemption,
    FirmRecord,
    Form,
    GeoLocation,
    HarmonizedStatement,
    PanelRow,
    Provider,
    Quality,
    RawFiling,
    Unit,
)

__version__ = "0.1.0"
