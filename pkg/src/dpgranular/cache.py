"""On-disk cache of canonical distance matrices keyed by content digests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CacheCorrupt
from .space import DatabaseClass, Granularity, Metric, canonical_metric, metric_label

FORMAT = "dpgranular-metric-cache/1"


def _stable(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def class_digest(class_ref: DatabaseClass) -> str:
    """Digest of the class universe and member encodings."""
    payload = {
        "universe": list(class_ref.universe.records),
        "ordered": class_ref.ordered,
        "members": [[k[0], [list(p) if isinstance(p, tuple) else p for p in k[1]]] for k in class_ref.index_of],
    }
    return hashlib.sha256(_stable(payload)).hexdigest()


def granularity_digest(g: Granularity) -> str:
    payload = {"class": class_digest(g.class_ref), "name": g.name, "adjacency": [list(r) for r in g.adjacency]}
    return hashlib.sha256(_stable(payload)).hexdigest()


def encode_matrix(values: np.ndarray) -> list:
    """Row-major flat list with ``"inf"`` for infinite entries."""
    return ["inf" if np.isinf(v) else float(v) for v in np.asarray(values, dtype=float).ravel()]


def decode_matrix(flat: list, n: int) -> np.ndarray:
    arr = np.array([np.inf if v == "inf" else float(v) for v in flat], dtype=float)
    return arr.reshape(n, n)


def _path(cache_dir: Path, g: Granularity) -> Path:
    return cache_dir / f"{class_digest(g.class_ref)[:16]}-{granularity_digest(g)[:16]}.json"


def cache_matrices(class_ref: DatabaseClass, granularities: Iterable[Granularity], cache_dir) -> list[Path]:
    """Compute and persist the canonical metric of every granularity; return the file paths."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for g in granularities:
        if g.class_ref != class_ref:
            raise ValueError("granularity lives over another class")
        d = canonical_metric(g)
        body = {
            "format": FORMAT,
            "class_digest": class_digest(class_ref),
            "granularity_digest": granularity_digest(g),
            "granularity": g.name,
            "n": len(class_ref),
            "values": encode_matrix(d.dist),
        }
        body["digest"] = hashlib.sha256(_stable(body)).hexdigest()
        p = _path(cache_dir, g)
        p.write_text(json.dumps(body, sort_keys=True) + "\n")
        paths.append(p)
    return paths


def load_cached(g: Granularity, cache_dir) -> Metric | None:
    """The cached canonical metric of ``g``, or ``None`` on a miss.

    Raises:
        CacheCorrupt: the file exists but fails its digest or shape checks.
    """
    p = _path(Path(cache_dir), g)
    if not p.exists():
        return None
    try:
        body = json.loads(p.read_text())
        digest = body.pop("digest")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CacheCorrupt(f"{p}: unreadable cache entry") from exc
    if hashlib.sha256(_stable(body)).hexdigest() != digest:
        raise CacheCorrupt(f"{p}: digest mismatch")
    if body.get("granularity_digest") != granularity_digest(g) or body.get("n") != len(g.class_ref):
        raise CacheCorrupt(f"{p}: entry belongs to another class or granularity")
    values = decode_matrix(body["values"], body["n"])
    return Metric(g.class_ref, values, metric_label(g.name), is_canonical_of=g)


def cached_canonical_metric(g: Granularity, cache_dir=None) -> Metric:
    """Canonical metric through the cache; corrupt or missing entries are recomputed."""
    if cache_dir is None:
        return canonical_metric(g)
    try:
        hit = load_cached(g, cache_dir)
    except CacheCorrupt:
        hit = None
    if hit is not None:
        return hit
    cache_matrices(g.class_ref, [g], cache_dir)
    return canonical_metric(g)


def clear_cache(cache_dir) -> int:
    """Remove every cache entry in ``cache_dir``; return how many were removed."""
    removed = 0
    for p in Path(cache_dir).glob("*.json"):
        try:
            if json.loads(p.read_text()).get("format") != FORMAT:
                continue
        except (json.JSONDecodeError, OSError, AttributeError):
            continue
        p.unlink()
        removed += 1
    return removed
