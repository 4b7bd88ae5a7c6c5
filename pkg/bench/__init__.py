"""
Experiments, data generators, CSV ingestion and the command-line surface.
"""
