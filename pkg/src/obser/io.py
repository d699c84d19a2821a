"""Stable file formats for embeddings, memories, and reports.

One observation per line, JSON-encoded::

    {"id": "0007", "region": "kitchen", "label": "cup",
     "pos": [0.1, 2.0, 0.3], "vec": [0.12, ...]}

``region``, ``label``, and ``pos`` may be null.  All records in a file
must agree on vector length, on whether labels are present, and on
whether positions are present; ids must be unique.  Vectors are accepted
when their norm is within 1e-3 of 1 and renormalized on load.

Floats in embedding files are written with 17 significant digits so a
load/save round trip is bit-exact.  Every writer goes through a
temp-file-plus-rename, so partially written outputs never appear under
the target name.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .eds import LabeledSet
from .kernel import NORM_INGEST_TOL, ObservationSet
from .memory import EpisodicMemory, Environment, MemoryEntry

__all__ = [
    "load_embeddings",
    "load_observations",
    "save_embeddings",
    "save_memory",
    "load_memory",
    "load_environment",
    "write_text",
    "write_json",
]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_text(path, text: str):
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2) + "\n")


def _record_line(id_, region, label, pos, vec) -> str:
    pos_s = "null" if pos is None else "[" + ", ".join(_fmt(p) for p in pos) + "]"
    vec_s = "[" + ", ".join(_fmt(v) for v in vec) + "]"
    return (
        "{"
        + f'"id": {json.dumps(id_)}, "region": {json.dumps(region)}, '
        + f'"label": {json.dumps(label)}, "pos": {pos_s}, "vec": {vec_s}'
        + "}"
    )


def save_embeddings(data, path):
    """Serialize an ObservationSet or LabeledSet to JSONL."""
    if isinstance(data, LabeledSet):
        data = data.to_observation_set()
    lines = []
    for i in range(len(data)):
        lines.append(
            _record_line(
                data.ids[i],
                data.region,
                None if data.labels is None else data.labels[i],
                None if data.positions is None else data.positions[i],
                data.vectors[i],
            )
        )
    write_text(path, "\n".join(lines) + "\n")


def _parse_record(line: str, lineno: int, path) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
    if not isinstance(rec, dict) or "id" not in rec or "vec" not in rec:
        raise ValueError(f"{path}:{lineno}: record needs 'id' and 'vec' fields")
    vec = rec["vec"]
    if not isinstance(vec, list) or not vec:
        raise ValueError(f"{path}:{lineno}: 'vec' must be a nonempty array")
    pos = rec.get("pos")
    if pos is not None and (not isinstance(pos, list) or len(pos) != 3):
        raise ValueError(f"{path}:{lineno}: 'pos' must be a 3-vector or null")
    return rec


def load_observations(path) -> ObservationSet:
    """Load a JSONL embedding file, keeping labels/region/positions attached."""
    path = Path(path)
    ids, vecs, labels, regions, positions = [], [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = _parse_record(line, lineno, path)
            vec = np.asarray(rec["vec"], dtype=float)
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > NORM_INGEST_TOL:
                raise ValueError(
                    f"{path}:{lineno}: vector norm {norm:.6f} outside 1 +/- "
                    f"{NORM_INGEST_TOL}"
                )
            ids.append(str(rec["id"]))
            vecs.append(vec)
            labels.append(rec.get("label"))
            regions.append(rec.get("region"))
            positions.append(rec.get("pos"))
    if not ids:
        raise ValueError(f"{path}: no embedding records")
    if len(set(ids)) != len(ids):
        dupe = next(i for i in ids if ids.count(i) > 1)
        raise ValueError(f"{path}: duplicate observation id {dupe!r}")
    dims = {len(v) for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"{path}: inconsistent vector dimensions {sorted(dims)}")

    labeled = [l is not None for l in labels]
    if any(labeled) and not all(labeled):
        raise ValueError(f"{path}: labels must be present on all records or none")
    positioned = [p is not None for p in positions]
    if any(positioned) and not all(positioned):
        raise ValueError(f"{path}: positions must be present on all records or none")
    region_values = set(regions)
    region = regions[0] if len(region_values) == 1 else None
    return ObservationSet(
        np.vstack(vecs),
        ids=ids,
        labels=[str(l) for l in labels] if all(labeled) else None,
        region=region,
        positions=np.asarray(positions, dtype=float) if all(positioned) else None,
    )


def load_embeddings(path):
    """Load JSONL embeddings; labeled files come back as a LabeledSet."""
    obs = load_observations(path)
    if obs.labels is not None:
        return LabeledSet.from_observations(obs)
    return obs


def save_memory(memory: EpisodicMemory, directory):
    """Write a memory as one JSONL per entry plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": 1, "entries": []}
    for i, entry in enumerate(memory.entries):
        fname = f"entry_{i:03d}.jsonl"
        obs = entry.observations
        if obs.region != entry.region:
            obs = ObservationSet(
                obs.vectors,
                ids=obs.ids,
                labels=obs.labels,
                region=entry.region,
                positions=obs.positions,
            )
        save_embeddings(obs, directory / fname)
        manifest["entries"].append(
            {
                "region": entry.region,
                "file": fname,
                "count": len(obs),
                "dim": obs.dim,
            }
        )
    write_json(directory / "manifest.json", manifest)


def _jsonl_files(directory) -> list:
    files = sorted(p for p in Path(directory).glob("*.jsonl"))
    if not files:
        raise ValueError(f"{directory}: no .jsonl files")
    return files


def _region_of(obs: ObservationSet, path: Path) -> str:
    return obs.region if obs.region is not None else path.stem


def load_memory(directory) -> EpisodicMemory:
    """Read a memory directory; uses the manifest order when present,
    otherwise sorted file order with the file stem as region id."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    memory = EpisodicMemory()
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        for item in manifest["entries"]:
            obs = load_observations(directory / item["file"])
            memory.add(MemoryEntry(observations=obs, region=item["region"]))
    else:
        for path in _jsonl_files(directory):
            obs = load_observations(path)
            memory.add(MemoryEntry(observations=obs, region=_region_of(obs, path)))
    return memory


def load_environment(directory, reachability=None) -> Environment:
    """Build an Environment from a directory of JSONL files.

    Regions come from the records when they carry one consistently, else
    from the file stem.  A manifest, when present, fixes the order.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    subenvs = []
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        for item in manifest["entries"]:
            obs = load_observations(directory / item["file"])
            subenvs.append((obs, item["region"]))
    else:
        for path in _jsonl_files(directory):
            obs = load_observations(path)
            subenvs.append((obs, _region_of(obs, path)))
    return Environment(subenvs, reachability=reachability)
