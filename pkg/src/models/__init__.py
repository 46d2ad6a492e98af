"""
Models package for the knowledge-tracing engine
"""
