# Backend Module
