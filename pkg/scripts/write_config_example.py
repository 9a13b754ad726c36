"""Regenerate config.example from the dataclass defaults.

    python scripts/write_config_example.py
"""

from pathlib import Path

from prn.config import example_text

out = Path(__file__).resolve().parents[1] / "config.example"
out.write_text(example_text())
print(f"wrote {out}")
