# Core module package