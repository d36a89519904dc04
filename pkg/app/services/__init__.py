"""Service modules for the discretization bias lab."""
