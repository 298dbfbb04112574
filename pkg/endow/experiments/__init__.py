"""Orchestration of solves, sweeps and simulations."""
