"""Histogram-assisted blind video deflickering."""
