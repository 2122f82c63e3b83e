"""Single-file model serialization: .hcx containers.

Layout: one ASCII line ``HCX <version> <header_nbytes>``, then a JSON header
of exactly that many bytes, then the binary payload — little-endian float64
sections in the order declared by the header's shape table. The header also
carries a sha256 over the canonicalized header (hash field excluded) plus
the payload, so any tampering or truncation is detected on load.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dataio import ClusterIndex, Preprocessor, Schema
from .flow import DensityThresholds, Flow
from .hypernet import HyperNet
from .training import ModelBundle, TrainConfig

FORMAT_VERSION = 1
MAGIC = "HCX"


class PersistError(RuntimeError):
    """Malformed, tampered, truncated, or wrong-version container."""


def _sections(bundle: ModelBundle) -> list[tuple[str, np.ndarray]]:
    """Every numeric payload, in the fixed declared order."""
    out = [(f"net/{name}", arr) for name, arr in bundle.net.state_arrays()]
    out += [(f"flow/{name}", arr) for name, arr in bundle.flow.state_arrays()]
    out.append(("thresholds/global",
                np.array([bundle.thresholds.global_threshold])))
    out.append(("thresholds/per_class",
                np.asarray(bundle.thresholds.per_class, dtype=np.float64)))
    if bundle.clusters is not None:
        for cls in bundle.clusters.classes():
            out.append((f"clusters/{cls}", bundle.clusters.centers[cls]))
    return out


def _payload_and_table(bundle: ModelBundle) -> tuple[bytes, list[dict]]:
    chunks: list[bytes] = []
    table: list[dict] = []
    for name, arr in _sections(bundle):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        chunks.append(arr.astype("<f8", copy=False).tobytes())
        table.append({"name": name, "shape": list(arr.shape)})
    return b"".join(chunks), table


def _meta(bundle: ModelBundle, table: list[dict]) -> dict:
    return {
        "version": FORMAT_VERSION,
        "schema": bundle.schema.to_dict(),
        "preprocessor": bundle.prep.numeric_state(),
        "config": bundle.config.to_dict(),
        "pretrain_accuracy": bundle.pretrain_accuracy,
        "sections": table,
    }


def _digest(meta: dict, payload: bytes) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(meta, sort_keys=True,
                        separators=(",", ":")).encode())
    h.update(payload)
    return h.hexdigest()


def hash_model(bundle: ModelBundle) -> str:
    """Content digest over canonical metadata and every numeric payload;
    independent of any file path."""
    payload, table = _payload_and_table(bundle)
    return _digest(_meta(bundle, table), payload)


def save_bundle(bundle: ModelBundle, path: str | Path) -> dict:
    """Write the single-file container; returns a small manifest."""
    payload, table = _payload_and_table(bundle)
    meta = _meta(bundle, table)
    meta["hash"] = _digest(meta, payload)
    header = json.dumps(meta, sort_keys=True, indent=1).encode()
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"{MAGIC} {FORMAT_VERSION} {len(header)}\n".encode())
        f.write(header)
        f.write(payload)
    return {"path": str(path), "version": FORMAT_VERSION,
            "hash": meta["hash"], "header_bytes": len(header),
            "payload_bytes": len(payload), "sections": len(table)}


def load_bundle(path: str | Path) -> ModelBundle:
    """Reconstruct a bundle; predictions and log densities are bit-identical
    to the saved model."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise PersistError(f"cannot read {path}: {e}") from e
    nl = blob.find(b"\n")
    if nl < 0:
        raise PersistError("not a model container: missing header line")
    fields = blob[:nl].decode(errors="replace").split()
    if len(fields) != 3 or fields[0] != MAGIC:
        raise PersistError("not a model container: bad magic line")
    try:
        version, header_nbytes = int(fields[1]), int(fields[2])
    except ValueError as e:
        raise PersistError("malformed header line") from e
    if version != FORMAT_VERSION:
        raise PersistError(f"unsupported container version {version}; "
                           f"this build reads version {FORMAT_VERSION}")
    header_start = nl + 1
    header_end = header_start + header_nbytes
    if len(blob) < header_end:
        raise PersistError("truncated container: header incomplete")
    try:
        meta = json.loads(blob[header_start:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PersistError(f"corrupt header: {e}") from e
    payload = blob[header_end:]
    expected = sum(int(np.prod(s["shape"])) for s in meta["sections"]) * 8
    if len(payload) != expected:
        raise PersistError(f"truncated container: payload has {len(payload)} "
                           f"bytes, header declares {expected}")
    stored_hash = meta.pop("hash", None)
    if stored_hash is None or _digest(meta, payload) != stored_hash:
        raise PersistError("content hash mismatch: container corrupted "
                           "or tampered with")

    schema = Schema.from_dict(meta["schema"])
    prep = Preprocessor.from_state(schema, meta["preprocessor"])
    config = TrainConfig.from_dict(meta["config"])

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for sec in meta["sections"]:
        count = int(np.prod(sec["shape"]))
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=offset).astype(np.float64)
        arrays[sec["name"]] = arr.reshape(sec["shape"])
        offset += count * 8

    dim = prep.encoded_dim
    K = schema.n_classes
    net = HyperNet(dim, K, seed=config.seed, hidden=config.hidden,
                   n_blocks=config.n_blocks, dropout_rate=config.dropout_rate)
    net.load_state_arrays({name[len("net/"):]: arr
                           for name, arr in arrays.items()
                           if name.startswith("net/")})
    flow = Flow(dim, K, seed=config.seed, n_layers=config.flow_layers,
                hidden=config.flow_hidden)
    flow.load_state_arrays({name[len("flow/"):]: arr
                            for name, arr in arrays.items()
                            if name.startswith("flow/")})
    for p in flow.parameters():
        p.requires_grad = False
    thresholds = DensityThresholds(
        float(arrays["thresholds/global"][0]),
        arrays["thresholds/per_class"].copy())
    clusters = None
    cluster_arrays = {name: arr for name, arr in arrays.items()
                      if name.startswith("clusters/")}
    if cluster_arrays:
        clusters = ClusterIndex({int(name.split("/", 1)[1]): arr.copy()
                                 for name, arr in cluster_arrays.items()})
    return ModelBundle(schema=schema, prep=prep, net=net, flow=flow,
                       thresholds=thresholds, config=config,
                       pretrain_accuracy=float(meta["pretrain_accuracy"]),
                       clusters=clusters)
