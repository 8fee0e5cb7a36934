"""Shared pytest configuration."""

from covspde import solve

# the library class is named after the mathematical object; keep pytest from
# trying to collect it as a test case when tests import it by name
solve.TestFunction.__test__ = False
