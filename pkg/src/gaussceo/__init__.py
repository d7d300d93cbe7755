"""Rate-distortion regions of the vector Gaussian CEO problem under log-loss."""
