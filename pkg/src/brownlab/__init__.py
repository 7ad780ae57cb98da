"""Brownian crossing trees, good-box percolation, exceptional Sobolev fields and level-set covers."""
__version__ = "0.1.0"
