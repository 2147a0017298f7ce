"""Adaptive insertion of edge-to-cloud refresh requests in a waterfall feed."""
