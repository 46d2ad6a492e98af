"""
Knowledge-tracing engine - Source Package
"""

__version__ = "1.0.0"
__author__ = "LKT Engine Team"
__description__ = "Streaming logistic knowledge tracing: feature engine, trainer, metrics and practice simulation"
