# Services module package