"""Fetch the MovieLens100k ratings and the 512x512 Lenna test image.

Neither file is redistributed with this repository.  Both are pulled from
archives published on PyPI so the mirror used by ``pip`` is enough:

* ``u.data`` is rebuilt from the ml-100k interaction file bundled inside the
  RecBole wheel (same rows, same order, tab separated).
* ``lenna.pgm`` is decoded from ``scipy/misc/lena.dat`` in the scipy 0.16.1
  source archive (8-bit grayscale, 512x512).

Usage::

    python scripts/fetch_datasets.py [--dest data]
"""
import argparse
import hashlib
import io
import pickle
import subprocess
import sys
import tarfile
import tempfile
import urllib.request
import zipfile
from pathlib import Path

import numpy as np

RECBOLE_SPEC = "recbole==1.2.1"
RECBOLE_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"
SCIPY_SDIST = (
    "https://pypi.org/packages/7b/e1/"
    "ecc1820874c396a094e6df30d4d3aa8119d4987c5ff0b9caec73db362849/"
    "scipy-0.16.1.tar.gz"
)
SCIPY_SHA256 = "ecd1efbb1c038accb0516151d1e6679809c6010288765eb5da6051550bf52260"
LENA_MEMBER = "scipy-0.16.1/scipy/misc/lena.dat"


def fetch_movielens(dest):
    out = dest / "ml-100k" / "u.data"
    if out.exists():
        return out
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", RECBOLE_SPEC,
             "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            lines = zf.read(RECBOLE_MEMBER).decode().splitlines()
    # drop the typed header, keep user item rating timestamp
    body = []
    for line in lines[1:]:
        user, item, rating, stamp = line.split("\t")
        body.append(f"{user}\t{item}\t{int(float(rating))}\t{int(float(stamp))}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(body) + "\n")
    return out


def fetch_lenna(dest):
    out = dest / "lenna.pgm"
    if out.exists():
        return out
    with urllib.request.urlopen(SCIPY_SDIST) as resp:
        blob = resp.read()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != SCIPY_SHA256:
        raise RuntimeError(f"scipy sdist checksum mismatch: {digest}")
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tf:
        raw = tf.extractfile(LENA_MEMBER).read()
    pixels = np.asarray(pickle.loads(raw, encoding="latin1"), dtype=np.uint8)
    h, w = pixels.shape
    dest.mkdir(parents=True, exist_ok=True)
    out.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dest", default=str(Path(__file__).resolve().parents[1] / "data"))
    args = parser.parse_args(argv)
    dest = Path(args.dest)
    for path in (fetch_movielens(dest), fetch_lenna(dest)):
        print(path, hashlib.sha256(path.read_bytes()).hexdigest()[:16])


if __name__ == "__main__":
    main()
