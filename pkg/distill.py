#!/usr/bin/env python3
"""
Distill Tools
=============
Launcher for the squeezing-distillation toolkit without installing the package.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "src"))


if __name__ == "__main__":
    # Check Python version
    if sys.version_info < (3, 10):
        print("This application requires Python 3.10 or higher")
        sys.exit(1)

    from distill_tools.cli import main
    main()
