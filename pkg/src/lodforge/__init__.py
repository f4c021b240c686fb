"""lodforge: structure-aware LOD model generation for urban scenes."""

__version__ = "0.1.0"
