"""Shared-cache denial-of-service laboratory: attack workloads against a
simulated non-blocking LLC and DRAM."""

__version__ = "0.1.0"
