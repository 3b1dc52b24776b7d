"""Tabulate the two-item gap instance over k: distance to the product of its
marginals, the 2k^2 bound, and the weighted-degree lower bound log(1/k)/4
against the degree of an explicit pairwise realization.

    python3 scripts/mrfgap_table.py [k ...]
"""
import sys

from robustmech.mrf import mrfgap_instance
from robustmech.synth import brev, srev


def main(argv=None) -> int:
    ks = [float(x) for x in (argv if argv is not None else sys.argv[1:])] or [0.01, 0.05, 0.1, 0.2, 0.25, 0.4]
    print(f"{'k':>6s} {'TV':>12s} {'2k^2':>10s} {'Delta >=':>10s} {'realized':>10s} {'SRev':>7s} {'BRev':>7s}")
    for k in ks:
        g = mrfgap_instance(k)
        print(f"{k:6.3f} {g.measured_tv:12.6g} {2 * k * k:10.6g} {g.delta_lower:10.6f} "
              f"{g.realization_delta:10.6f} {srev(g.joint)[0]:7.4f} {brev(g.joint)[0]:7.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
