"""Regenerate the bundled keypoint fixtures (src/dualretarget/data/fixtures/*.kp)."""

from pathlib import Path

from dualretarget.fixtures import write_fixtures

OUT = Path(__file__).resolve().parents[1] / "src" / "dualretarget" / "data" / "fixtures"

if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for p in write_fixtures(OUT):
        print(f"wrote {p}")
