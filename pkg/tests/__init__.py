"""Test suite for splatcal."""
