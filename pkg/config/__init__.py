# Config package
# Benchmark config files and environment settings
