"""
Domain types and persisted records.
"""
