#!/usr/bin/env python3
"""DTSL - Dual teacher-student segmentation"""

import sys
import os

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dtsl.ui.cli import main


if __name__ == "__main__":
    sys.exit(main())
