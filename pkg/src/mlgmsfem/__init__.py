"""Multilevel generalized multiscale finite elements on structured 2D grids."""
