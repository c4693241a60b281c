"""Near-duplicate image retrieval toolkit.

Submodules:

- ``imaging``: deterministic raster primitives (decode, resize, rotate, ...)
- ``manipgen``: the image-manipulation benchmark catalog and generator
- ``orb_features``: binary local features and PCA code compression
- ``phash``: 64-bit perceptual DCT hash
- ``vector_index``: exact flat KNN index with vote and distance retrieval
- ``match_classifier``: logistic match/no-match classifier over pair features
- ``eval_harness``: recall benchmarks, confidence intervals, lag histograms
- ``feature_io``: binary feature-file format and manifest parsing
- ``figures``: matplotlib figure rendering for the CLI report paths
- ``cli``: command-line entry point
"""

__version__ = "0.1.0"
