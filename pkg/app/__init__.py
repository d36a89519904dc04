"""Discretization bias lab: estimators, coarsening and exact g-computation."""
