"""Heterogeneous treatment effect estimation and validation toolkit."""
