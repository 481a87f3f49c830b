#!/usr/bin/env python3
"""Download and convert the Feynman symbolic-regression corpus.

The bundled problems under ./problems are synthetic five-law recovery
tasks; the full corpus of physics equations is *not* shipped with this
repository. This script fetches it from the upstream distribution site,
pins the downloads by SHA-256, and converts selected equations into the
problem format the `dimsr` CLI consumes (a `.spec` TOML file plus a
`.csv` data file per equation).

The converter is written against the published corpus layout
(`FeynmanEquations.csv` with per-variable names and sampling ranges,
`units.csv` with per-variable exponents over the metre / second /
kilogram / kelvin / volt basis, and one whitespace-separated data file
per equation inside the tarball). It fails loudly, before writing
anything, if that layout drifts.

Checksums live in `scripts/feynman.sha256`. The file starts out with
empty digests; the first successful `fetch --pin` fills them in, and
every later fetch verifies against them. Review the pinned digests once
against a second source before trusting archived results.

Typical flow:

    python3 scripts/prepare_feynman.py fetch --dest data/feynman --pin
    python3 scripts/prepare_feynman.py convert --dest data/feynman \
        --out problems/feynman --equations I.12.2,I.27.6 --rows 1000
"""

import argparse
import csv
import hashlib
import io
import sys
import tarfile
import urllib.request
from pathlib import Path

BASE_URL = "https://space.mit.edu/home/tegmark/aifeynman"
FILES = ["Feynman_with_units.tar.gz", "FeynmanEquations.csv", "units.csv"]
CHECKSUM_FILE = Path(__file__).with_name("feynman.sha256")

# Upstream expresses dimensions over this five-unit basis; each maps to
# a unit expression the engine's parser understands.
UNIT_BASIS = ["m", "s", "kg", "K", "V"]


def sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_checksums() -> dict:
    pins = {}
    if CHECKSUM_FILE.exists():
        for line in CHECKSUM_FILE.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            digest, name = line.split(None, 1)
            pins[name.strip()] = digest
    return pins


def write_checksums(pins: dict) -> None:
    lines = ["# SHA-256 digests of the upstream Feynman corpus downloads.",
             "# Filled by `prepare_feynman.py fetch --pin`; verified on every fetch."]
    lines += [f"{digest}  {name}" for name, digest in sorted(pins.items())]
    CHECKSUM_FILE.write_text("\n".join(lines) + "\n")


def cmd_fetch(args) -> int:
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    pins = read_checksums()
    updated = dict(pins)
    failures = 0
    for name in FILES:
        target = dest / name
        if not target.exists():
            url = f"{BASE_URL}/{name}"
            print(f"downloading {url}")
            with urllib.request.urlopen(url) as response, open(target, "wb") as out:
                while chunk := response.read(1 << 20):
                    out.write(chunk)
        digest = sha256_of(target)
        pinned = pins.get(name, "")
        if not pinned:
            print(f"{name}: no pinned digest; computed {digest}")
            if args.pin:
                updated[name] = digest
            else:
                print("  rerun with --pin to record it (verify independently first)")
                failures += 1
        elif pinned != digest:
            print(f"{name}: DIGEST MISMATCH\n  pinned   {pinned}\n  computed {digest}")
            failures += 1
        else:
            print(f"{name}: ok")
    if args.pin and updated != pins:
        write_checksums(updated)
        print(f"pinned digests written to {CHECKSUM_FILE}")
    return 1 if failures else 0


def require_columns(row: dict, needed: list, context: str) -> None:
    missing = [c for c in needed if c not in row]
    if missing:
        sys.exit(f"{context}: expected columns {missing} are absent; "
                 f"got {sorted(row)}. Upstream layout may have changed.")


def unit_string(exponents: list) -> str:
    parts = []
    for base, exp in zip(UNIT_BASIS, exponents):
        if exp == 0:
            continue
        frac = int(exp) if float(exp) == int(exp) else exp
        parts.append(base if frac == 1 else f"{base}^{frac}")
    return "*".join(parts) if parts else "1"


def load_units(dest: Path) -> dict:
    units = {}
    with open(dest / "units.csv", newline="") as f:
        for row in csv.DictReader(f):
            require_columns(row, ["Variable"] + UNIT_BASIS, "units.csv")
            exponents = [float(row[b] or 0) for b in UNIT_BASIS]
            units[row["Variable"].strip()] = unit_string(exponents)
    return units


def cmd_convert(args) -> int:
    dest = Path(args.dest)
    out = Path(args.out)
    wanted = [e.strip() for e in args.equations.split(",") if e.strip()]
    if not wanted:
        sys.exit("no equations selected; pass --equations I.12.2,...")
    units = load_units(dest)

    equations = {}
    with open(dest / "FeynmanEquations.csv", newline="") as f:
        for row in csv.DictReader(f):
            require_columns(row, ["Filename", "Formula", "Output", "# variables"],
                            "FeynmanEquations.csv")
            if row["Filename"].strip():
                equations[row["Filename"].strip()] = row

    out.mkdir(parents=True, exist_ok=True)
    with tarfile.open(dest / "Feynman_with_units.tar.gz") as tar:
        members = {Path(m.name).name: m for m in tar.getmembers() if m.isfile()}
        for eq in wanted:
            row = equations.get(eq)
            if row is None:
                sys.exit(f"equation {eq} not present in FeynmanEquations.csv")
            n_vars = int(float(row["# variables"]))
            names = [row[f"v{i}_name"].strip() for i in range(1, n_vars + 1)]
            target = row["Output"].strip()
            member = members.get(eq)
            if member is None:
                sys.exit(f"no data file named {eq} inside the tarball")

            slug = eq.replace(".", "_")
            data = io.TextIOWrapper(tar.extractfile(member))
            csv_path = out / f"{slug}.csv"
            with open(csv_path, "w", newline="") as o:
                writer = csv.writer(o)
                writer.writerow(names + [target])
                for i, line in enumerate(data):
                    if i >= args.rows:
                        break
                    writer.writerow(line.split())

            # Upstream formulas use Python syntax and free constants
            # (pi, epsilon, ...) that the engine's grammar does not
            # accept; leave the optional `truth` field out and record
            # the formula as a comment for manual translation.
            lines = [f'name = "{slug}"',
                     f'data = "{slug}.csv"',
                     f'# upstream formula (translate by hand into a `truth` entry',
                     f'# to track symbolic-solution rates): {row["Formula"].strip()}',
                     f'difficulty = "{ "easy" if n_vars <= 3 else "medium" }"',
                     "",
                     "[units]"]
            for column in names + [target]:
                if column not in units:
                    sys.exit(f"{eq}: variable {column} missing from units.csv")
                lines.append(f'{column} = "{units[column]}"')
            (out / f"{slug}.spec").write_text("\n".join(lines) + "\n")
            print(f"{eq}: wrote {slug}.spec and {slug}.csv ({min(args.rows, i + 1)} rows)")
    print(f"validate with: cargo run -- validate {out}/*.spec")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    fetch = sub.add_parser("fetch", help="download the corpus and verify checksums")
    fetch.add_argument("--dest", default="data/feynman")
    fetch.add_argument("--pin", action="store_true",
                       help="record digests for files that have none yet")
    fetch.set_defaults(run=cmd_fetch)

    convert = sub.add_parser("convert", help="emit .spec/.csv problems for selected equations")
    convert.add_argument("--dest", default="data/feynman")
    convert.add_argument("--out", default="problems/feynman")
    convert.add_argument("--equations", required=True,
                         help="comma-separated equation ids, e.g. I.12.2,I.27.6")
    convert.add_argument("--rows", type=int, default=1000,
                         help="rows to keep per equation (upstream files hold ~1e6)")
    convert.set_defaults(run=cmd_convert)

    args = parser.parse_args()
    return args.run(args)


if __name__ == "__main__":
    sys.exit(main())
