# ABOUTME: Test package for the cellgnn characterization toolkit.
# ABOUTME: Holds one test module per library module plus shared fixtures in conftest.py.
