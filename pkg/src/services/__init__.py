"""
Services package for the knowledge-tracing engine
"""
