"""Spatio-temporal change of support (STCOS) modelling."""
