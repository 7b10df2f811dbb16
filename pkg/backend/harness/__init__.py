# Harness Module
