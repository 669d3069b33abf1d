"""Result files and checkpoints.

Every CSV starts with ``# spec_hash=<h> version=<v>`` and every JSON
carries the same two keys.  Floats are written with ``repr`` so reruns are
byte-identical.  Checkpoints are per ensemble member: BFLD snapshots of
theta and psi, ``.npy`` arrays for the Adams-Bashforth history and other
numeric state, and a JSON record holding the stream position, file
checksums and a format version.  The JSON is written last and is the
commit marker.
"""
import hashlib
import json
import os

import numpy as np

from . import __version__
from .fields import Grid, ScalarField, SnapshotError, read_snapshot, write_snapshot

CHECKPOINT_FORMAT = 1


class CheckpointError(ValueError):
    pass


def _atomic_write_bytes(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_json(path, obj, spec_hash):
    body = {"spec_hash": spec_hash, "version": __version__}
    body.update(obj)
    _atomic_write_bytes(path, (json.dumps(body, indent=2, sort_keys=True, default=_jsonable)
                               + "\n").encode())


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not JSON serializable: {type(x)}")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class CsvWriter:
    """Append-only CSV with a provenance header line."""

    def __init__(self, path, columns, spec_hash, keep_rows=None):
        self.path = path
        self.columns = tuple(columns)
        self.rows = 0
        if keep_rows is None or not os.path.exists(path):
            with open(path, "w") as fh:
                fh.write(f"# spec_hash={spec_hash} version={__version__}\n")
                fh.write(",".join(self.columns) + "\n")
        else:
            with open(path) as fh:
                lines = fh.readlines()
            if len(lines) < 2 + keep_rows:
                raise CheckpointError(f"{path}: fewer rows than the checkpoint records")
            with open(path, "w") as fh:
                fh.writelines(lines[:2 + keep_rows])
            self.rows = keep_rows
        self._fh = open(path, "a")

    def write(self, row):
        self._fh.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")
        self.rows += 1

    def flush(self):
        self._fh.flush()

    def close(self):
        self._fh.close()


def write_csv(path, columns, rows, spec_hash):
    w = CsvWriter(path, columns, spec_hash)
    for r in rows:
        w.write(r)
    w.close()


def read_csv(path):
    """Header dict and rows (as float dicts) of a file from ``CsvWriter``."""
    with open(path) as fh:
        first = fh.readline()
        cols = fh.readline().strip().split(",")
        rows = [dict(zip(cols, map(float, line.strip().split(",")))) for line in fh if line.strip()]
    meta = dict(kv.split("=", 1) for kv in first.lstrip("# ").split())
    return meta, rows


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ----------------------------------------------------------------- checkpoints

def save_member_checkpoint(ckpt_dir, member, spec_hash, grid: Grid, fields: dict,
                           arrays: dict, meta: dict):
    """Write one member's checkpoint.

    ``fields`` maps names to real (nx, nz) arrays stored as BFLD snapshots;
    ``arrays`` maps names to arbitrary ndarrays stored as ``.npy``.
    """
    os.makedirs(ckpt_dir, exist_ok=True)
    files = {}
    stem = os.path.join(ckpt_dir, f"m{member:04d}")
    for name, values in fields.items():
        path = f"{stem}_{name}.bfld"
        write_snapshot(path + ".tmp", ScalarField(grid, np.asarray(values)), meta.get("t", 0.0))
        os.replace(path + ".tmp", path)
        files[os.path.basename(path)] = file_sha256(path)
    for name, arr in arrays.items():
        path = f"{stem}_{name}.npy"
        with open(path + ".tmp", "wb") as fh:
            np.save(fh, np.asarray(arr), allow_pickle=False)
        os.replace(path + ".tmp", path)
        files[os.path.basename(path)] = file_sha256(path)
    record = {"format": CHECKPOINT_FORMAT, "version": __version__, "spec_hash": spec_hash,
              "member": member, "files": files, "fields": sorted(fields),
              "arrays": sorted(arrays), "meta": meta}
    _atomic_write_bytes(f"{stem}.json", json.dumps(record, sort_keys=True,
                                                    default=_jsonable).encode())


def has_checkpoint(ckpt_dir, member):
    return os.path.exists(os.path.join(ckpt_dir, f"m{member:04d}.json"))


def load_member_checkpoint(ckpt_dir, member, spec_hash):
    """Return (grid, fields, arrays, meta) after format, hash and checksum checks."""
    stem = os.path.join(ckpt_dir, f"m{member:04d}")
    try:
        with open(f"{stem}.json") as fh:
            record = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint for member {member} in {ckpt_dir}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{stem}.json: corrupt checkpoint record ({exc})") from None
    fmt = record.get("format")
    if fmt != CHECKPOINT_FORMAT:
        raise CheckpointError(f"checkpoint format version {fmt} (written by {record.get('version')}); "
                              f"this build reads format {CHECKPOINT_FORMAT} (version {__version__})")
    if record.get("spec_hash") != spec_hash:
        raise CheckpointError(f"checkpoint was written for spec {record.get('spec_hash')}, "
                              f"current spec is {spec_hash}; parameters changed")
    for name, digest in record["files"].items():
        path = os.path.join(ckpt_dir, name)
        if not os.path.exists(path) or file_sha256(path) != digest:
            raise CheckpointError(f"{path}: checksum mismatch, checkpoint corrupt")
    grid, fields = None, {}
    for name in record["fields"]:
        try:
            grid, values, _ = read_snapshot(f"{stem}_{name}.bfld")
        except SnapshotError as exc:
            raise CheckpointError(str(exc)) from None
        fields[name] = values
    arrays = {name: np.load(f"{stem}_{name}.npy", allow_pickle=False) for name in record["arrays"]}
    return grid, fields, arrays, record["meta"]
