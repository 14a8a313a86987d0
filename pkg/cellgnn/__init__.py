# ABOUTME: cellgnn package for GNN-based standard-cell library characterization.
# ABOUTME: Contains cell netlists, graph encoding, the analytical oracle, training, libraries, and STA.

__version__ = "0.1.0"
