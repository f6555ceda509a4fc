"""Simulation and analysis toolkit for robot-to-human peg handover experiments."""

__version__ = "0.1.0"
