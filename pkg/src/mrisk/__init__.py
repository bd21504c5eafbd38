"""Asymptotic risk of convex M-estimators."""
