# Simulation Module
# Synthetic shapes-world datasets and named benchmark profiles
