"""
Tests package for the knowledge-tracing engine
"""
