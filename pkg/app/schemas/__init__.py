"""
Pydantic schemas for configuration documents and run records
"""
