"""Total-treatment-effect estimation under unknown network interference."""

__version__ = "0.1.0"
