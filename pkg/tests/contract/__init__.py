"""
Contract tests package
"""
