# Backend Core Logic Module
# Numerical engine: model, objectives, schedules, attack, metrics, training
