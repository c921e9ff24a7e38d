"""Generate the determining systems for the generic canonical system and compare
them with the transcribed references.  Writes the generated files to --out.
"""

import argparse
import time
from pathlib import Path

from qcondsym import read_data
from qcondsym.cli import determining_source
from qcondsym.condsym import (
    compare_systems,
    determining_system,
    normalize_xi0,
    reduce_system,
    restrict_example,
    system_from_source,
)
from qcondsym.pdeparse import parse_source

NORMALIZED = ("xi0", "xi", "eta1", "eta2")


def ref(name):
    return system_from_source(parse_source(read_data("reference", name)))


def main():
    ap = argparse.ArgumentParser(description="derive determining systems")
    ap.add_argument("--out", default="derived", help="output directory")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    src = parse_source(read_data("rd_generic.sys"))
    S, Q, asm = src.system, src.operator, tuple(src.assumptions)
    t0 = time.perf_counter()
    ft = determining_system(S, Q, (1,), assumptions=asm)
    nc = determining_system(S, Q, (1, 2), assumptions=asm)
    nn = normalize_xi0(nc)
    jobs = [
        ("first_type", reduce_system(ft, asm), ref("first_type.sys"), None),
        ("nonclassical", reduce_system(nc, asm), ref("nonclassical.sys"), None),
        ("nonclassical_normalized", nn, ref("nonclassical_normalized.sys"), NORMALIZED),
        ("example_first_type", restrict_example(ft), ref("example_first_type.sys"), None),
        ("example_nonclassical", restrict_example(nc), ref("example_nonclassical.sys"), None),
    ]
    for name, ds, reference, unknowns in jobs:
        rep = compare_systems(ds, reference, unknowns=unknowns or ("xi0", "xi1", "eta1", "eta2"))
        (out / f"{name}.sys").write_text(determining_source(ds, src.scope))
        print(f"{name:<26} {len(ds):>3} equations  vs reference: {rep.status}")
    print(f"done in {time.perf_counter() - t0:.2f}s; files in {out}/")


if __name__ == "__main__":
    main()
