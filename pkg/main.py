#!/usr/bin/env python3
"""
Glass Defect Inspector - command-line entry point
"""
import os
import sys


def main() -> int:
    # Add the backend directory to Python path
    backend_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "backend")
    sys.path.insert(0, backend_path)

    from app.cli import main as cli_main

    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
