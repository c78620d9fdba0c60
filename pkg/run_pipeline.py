#!/usr/bin/env python3
"""
Standalone entry point for the assertion pipeline CLI
"""
import sys

from services.assertion_pipeline.cli import main

if __name__ == "__main__":
    sys.exit(main())
