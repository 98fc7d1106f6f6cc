"""In-network feature flow estimation, alignment and video detection post-processing."""
