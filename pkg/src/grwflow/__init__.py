"""Mean curvature flow of spacelike graphs in GRW spacetimes, with a verification harness."""

__version__ = "0.1.0"
