"""Producer of text and region embedding files for the xdet harness.

This package only writes files in the harness's documented JSON schemas; it
never imports the harness itself.
"""

__version__ = "0.1.0"
