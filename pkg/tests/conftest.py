import sys
from pathlib import Path

# make local test helpers (bruteforce oracle, stubs) importable
sys.path.insert(0, str(Path(__file__).parent))
