#!/usr/bin/env python3
"""Place the MovieLens 100K ratings file at data/ml-100k/u.data.

Tries the GroupLens archive first. If that is unreachable, falls back to the
copy of the same ratings bundled inside the `recbole` wheel on PyPI (its
`ml-100k.inter` file is `u.data` plus a header line).
"""
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
DEST = ROOT / "data" / "ml-100k" / "u.data"
GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
EXPECTED_LINES = 100_000


def from_grouplens() -> bytes:
    with urllib.request.urlopen(GROUPLENS, timeout=30) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_recbole_wheel() -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "recbole==1.2.1", "--no-deps", "-d", tmp],
            check=True,
            stdout=subprocess.DEVNULL,
        )
        wheel = next(pathlib.Path(tmp).glob("recbole-*.whl"))
        inter = zipfile.ZipFile(wheel).read("recbole/dataset_example/ml-100k/ml-100k.inter")
    lines = inter.decode().splitlines()[1:]
    return ("\n".join(lines) + "\n").encode()


def main() -> int:
    if DEST.exists():
        print(f"{DEST} already present")
        return 0
    try:
        data = from_grouplens()
    except Exception as exc:  # noqa: BLE001
        print(f"grouplens download failed ({exc}); using the recbole wheel", file=sys.stderr)
        data = from_recbole_wheel()
    n = data.count(b"\n")
    if n != EXPECTED_LINES:
        print(f"unexpected line count {n}", file=sys.stderr)
        return 1
    DEST.parent.mkdir(parents=True, exist_ok=True)
    DEST.write_bytes(data)
    print(f"wrote {DEST} ({n} ratings)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
