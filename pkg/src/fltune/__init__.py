"""Federated-learning overhead simulator with online hyper-parameter tuning."""
