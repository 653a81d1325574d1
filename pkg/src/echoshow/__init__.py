"""Acquisition and analysis toolkit for the Amazon Echo Show 15."""

__version__ = "0.1.0"
