"""
pfedgrp-sim
Personalized federated learning simulator with per-class generative replay
"""
