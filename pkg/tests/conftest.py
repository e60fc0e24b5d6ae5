import sys
from pathlib import Path

import modalpinn  # noqa: F401  (enables float64 before any test builds arrays)

sys.path.insert(0, str(Path(__file__).resolve().parent))
