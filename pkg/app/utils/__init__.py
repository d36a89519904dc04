"""Utility modules for the discretization bias lab."""
