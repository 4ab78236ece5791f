"""Command line interface, configuration, file I/O and Monte Carlo runners."""
