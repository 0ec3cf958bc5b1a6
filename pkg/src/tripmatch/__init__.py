"""tripmatch: link travel-diary trips to smart-card journeys and quantify
the time-reporting error with a non-parametric analysis battery."""

__version__ = "0.1.0"
