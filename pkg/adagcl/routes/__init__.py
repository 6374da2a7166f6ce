"""
Command groups of the command-line interface.
"""
