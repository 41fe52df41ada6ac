"""Run the acceptance suite and print only the per-criterion verdict lines.

Usage: python scripts/run_acceptance.py [extra pytest args]
"""

import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    cmd = [sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_acceptance.py"), "-q", "-s", *sys.argv[1:]]
    done = subprocess.run(cmd, capture_output=True, text=True, cwd=ROOT)
    verdicts = [line for line in done.stdout.splitlines() if line.startswith("AC")]
    print("\n".join(verdicts) if verdicts else done.stdout)
    print(done.stdout.strip().splitlines()[-1] if done.stdout.strip() else done.stderr)
    return done.returncode


if __name__ == "__main__":
    sys.exit(main())
