#!/usr/bin/env python3
"""Download the benchmark matrices into data/.

The solver and test suite read local Matrix Market files only; this
script is the single place that touches the network.  Each archive from
the SuiteSparse Matrix Collection unpacks to <name>/<name>.mtx, which is
moved to data/<name>.mtx.

Usage: python scripts/fetch_matrices.py [name ...]
Default names: illc1850 beaflw
"""

import io
import pathlib
import sys
import tarfile
import urllib.request

BASE = "https://suitesparse-collection-website.herokuapp.com/MM"
GROUPS = {
    "illc1850": "HB",
    "beaflw": "HB",
    "lpi_klein3": "LPnetlib",
    "ex3sta1": "Meszaros",
}

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"


def fetch(name):
    group = GROUPS.get(name)
    if group is None:
        print(f"unknown matrix {name!r}; known: {sorted(GROUPS)}", file=sys.stderr)
        return False
    target = DATA / f"{name}.mtx"
    if target.exists():
        print(f"{target} already present")
        return True
    url = f"{BASE}/{group}/{name}.tar.gz"
    print(f"fetching {url}")
    try:
        with urllib.request.urlopen(url, timeout=120) as resp:
            blob = resp.read()
    except OSError as exc:
        print(f"  failed: {exc}", file=sys.stderr)
        return False
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        member = tar.getmember(f"{name}/{name}.mtx")
        data = tar.extractfile(member).read()
    DATA.mkdir(exist_ok=True)
    target.write_bytes(data)
    print(f"  wrote {target} ({len(data)} bytes)")
    return True


def main(argv):
    names = argv[1:] or ["illc1850", "beaflw"]
    ok = all([fetch(name) for name in names])
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv))
