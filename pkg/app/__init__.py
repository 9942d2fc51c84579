# Infrared fixed-pattern-noise reduction toolkit

__version__ = "1.0.0"
