"""
Utilities package for the knowledge-tracing engine
"""
