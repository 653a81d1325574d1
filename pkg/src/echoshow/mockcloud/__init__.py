"""Offline mock of the vendor cloud for acquisition tests."""

from .http import MockServer, serve
from .service import CONTROL_PREFIX, FixtureError, InProcessTransport, MockClock, MockCloud, load_fixtures

__all__ = ["MockServer", "serve", "CONTROL_PREFIX", "FixtureError", "InProcessTransport",
           "MockClock", "MockCloud", "load_fixtures"]
