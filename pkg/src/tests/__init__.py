# Test package for the stc_mixhop pipeline
