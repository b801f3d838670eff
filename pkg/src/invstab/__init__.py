"""invstab - small-signal stability workbench for grid-tied inverter controls."""

__version__ = "0.1.0"
