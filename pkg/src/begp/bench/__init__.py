"""Synthetic task families, experiment protocols, metrics and the GP baseline."""
