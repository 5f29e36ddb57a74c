"""Shared pytest configuration.

The presence of this file puts the tests directory on sys.path so the
reference modules (oracles, scenarios) import without packaging them.
"""
