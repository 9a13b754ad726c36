"""Print the worst analytic-vs-numeric gradient error per parameter over random instances.

    python scripts/gradcheck_report.py --instances 50
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from instances import random_instance  # noqa: E402
from oracles import central_differences, relative_error  # noqa: E402

from prn.relation import PARAM_NAMES, attention_backward, attention_forward  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--eps", type=float, default=1e-4)
    args = ap.parse_args()

    worst = dict.fromkeys(PARAM_NAMES + ("x",), 0.0)
    for seed in range(args.instances):
        x, w, ds = random_instance(seed)
        grads = attention_backward(attention_forward(x, w)[1], ds)
        for name in worst:
            arr = x if name == "x" else getattr(w, name)
            num = central_differences(lambda: float(ds @ attention_forward(x, w)[0]), arr, args.eps)
            worst[name] = max(worst[name], float(relative_error(grads[name], num).max()))
    for name, err in worst.items():
        print(f"{name:<4} {err:.3e}")
    print(f"max  {max(worst.values()):.3e}  (eps {args.eps}, {args.instances} instances)")
    return 0 if np.isfinite(max(worst.values())) else 1


if __name__ == "__main__":
    sys.exit(main())
