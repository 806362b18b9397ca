"""orbitcad: collaborative CAD visualization backend — mesh ingest and
reduction, synchronized session logs, headless rendering, and fiducial
alignment."""

__version__ = "0.1.0"
