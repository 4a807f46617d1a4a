# Keep it aligned with the version in CHANGELOG.md

__version__ = "0.1.0"
