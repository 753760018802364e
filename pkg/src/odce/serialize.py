"""File formats: per-arc CSV vectors and JSON dumps of routing data."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .graph import Network, PathTable

__all__ = [
    "write_arc_csv",
    "read_arc_csv",
    "write_routing_json",
    "read_routing_json",
    "write_json",
    "read_json",
    "params_to_json",
]


def write_arc_csv(path, network: Network, values) -> None:
    """One row per arc, ``tail,head,value``, in arc-index order."""
    values = np.asarray(values, dtype=float)
    if values.shape != (network.n,):
        raise ValueError(f"expected {network.n} values, got {values.shape}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tail", "head", "value"])
        for k, (i, j) in enumerate(network.arcs()):
            w.writerow([i, j, repr(float(values[k]))])


def read_arc_csv(path, network: Network | None = None) -> tuple[Network, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"tail", "head", "value"}:
        raise ValueError(f"{path}: expected columns tail,head,value")
    if network is None:
        nodes = {int(r["tail"]) for r in rows} | {int(r["head"]) for r in rows}
        network = Network(max(nodes) + 1)
    if len(rows) != network.n:
        raise ValueError(f"{path}: {len(rows)} rows for a network with {network.n} arcs")
    values = np.empty(network.n)
    seen = set()
    for r in rows:
        k = network.arc_index(int(r["tail"]), int(r["head"]))
        seen.add(k)
        values[k] = float(r["value"])
    if len(seen) != network.n:
        raise ValueError(f"{path}: duplicate arcs")
    return network, values


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_routing_json(path, network: Network, table: PathTable, A) -> None:
    write_json(
        path,
        {
            "p": network.p,
            "n": network.n,
            "paths": table.to_dict(),
            "routing_matrix": np.asarray(A).astype(int).tolist(),
        },
    )


def read_routing_json(path):
    data = read_json(path)
    net = Network(int(data["p"]))
    A = np.asarray(data["routing_matrix"], dtype=np.int8)
    if A.shape != (net.n, net.n):
        raise ValueError(f"{path}: routing matrix has shape {A.shape}, expected {(net.n, net.n)}")
    return net, PathTable.from_dict(data["paths"]), A


def params_to_json(params: dict) -> dict:
    """Map internal parameter names to the on-disk keys (``lambda``, ``b``, ``probs``, ``K``)."""
    keymap = {"lam": "lambda"}
    out = {}
    for k, v in params.items():
        if v is None:
            continue
        out[keymap.get(k, k)] = int(v) if k == "K" else np.asarray(v, dtype=float).tolist()
    return out
