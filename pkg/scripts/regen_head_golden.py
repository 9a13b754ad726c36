"""Regenerate tests/data/head_golden.npz with the loop-by-loop reference head.

    python scripts/regen_head_golden.py
"""

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import naive_forward_head  # noqa: E402

from prn.propgen import HeadWeights  # noqa: E402

T, C, H, SEED = 100, 8, 8, 7


def main():
    rng = np.random.default_rng(SEED)
    x = rng.normal(size=(T, C))
    w = HeadWeights.init(T, C, H, T, seed=SEED)
    p_start, p_end, m_cc, m_cr = naive_forward_head(x, w.params, T)
    out = ROOT / "tests" / "data" / "head_golden.npz"
    np.savez(out, x=x, p_start=p_start, p_end=p_end, m_cc=m_cc, m_cr=m_cr,
             **{f"w_{k}": v for k, v in w.params.items()})
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
