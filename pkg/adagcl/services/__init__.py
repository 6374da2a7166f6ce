"""
Services holding the package operations, one module per concern.
"""
