import sys
from pathlib import Path

# Make reference.py and simutil.py importable from every test module.
sys.path.insert(0, str(Path(__file__).resolve().parent))
