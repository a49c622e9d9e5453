# Backend application package