"""Per-input layer skip/repeat path search over a frozen layer stack."""

__version__ = "0.1.0"
