"""Configuration, synthetic data, file formats, benches and the command line."""
