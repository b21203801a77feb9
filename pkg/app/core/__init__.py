"""
Process settings, the exception hierarchy and deterministic seed derivation
"""
