"""Corpora of image records: attribute metadata plus named embedding views.

Persistence is a JSON manifest next to one binary matrix file per view.
Matrix files are little-endian float32 row-major with a small header:
magic ``FCPE``, u32 version (1), u64 row count, u64 dim. The manifest
records a sha256 per matrix file so round-trips are verifiable bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

MAGIC = b"FCPE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class CorpusError(ValueError):
    """Malformed corpus data (duplicate ids, shape or value violations)."""


@dataclass
class ImageRecord:
    id: str
    attributes: dict[str, str]
    image_uri: str | None = None


@dataclass
class EmbeddingView:
    name: str
    dim: int
    matrix: np.ndarray  # (n, dim) float32

    def __post_init__(self) -> None:
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.dim < 1:
            raise CorpusError(f"view {self.name!r}: dim must be >= 1, got {self.dim}")
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.dim:
            raise CorpusError(
                f"view {self.name!r}: matrix shape {self.matrix.shape} does not match dim {self.dim}")
        bad = ~np.isfinite(self.matrix)
        if bad.any():
            row = int(np.argwhere(bad)[0][0])
            raise CorpusError(f"view {self.name!r}: non-finite value at record index {row}")


@dataclass
class Corpus:
    records: list[ImageRecord]
    views: dict[str, EmbeddingView]
    schema: dict[str, list[str]]
    sensitive_attributes: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._validate()
        self._index = {rec.id: i for i, rec in enumerate(self.records)}

    def _validate(self) -> None:
        seen: dict[str, int] = {}
        for i, rec in enumerate(self.records):
            if rec.id in seen:
                raise CorpusError(
                    f"duplicate id {rec.id!r} at record indexes {seen[rec.id]} and {i}")
            seen[rec.id] = i
            for attr, values in self.schema.items():
                if attr not in rec.attributes:
                    raise CorpusError(f"record index {i}: missing attribute {attr!r}")
                if rec.attributes[attr] not in values:
                    raise CorpusError(
                        f"record index {i}: unknown value {rec.attributes[attr]!r} "
                        f"for attribute {attr!r}")
        n = len(self.records)
        for view in self.views.values():
            if view.matrix.shape[0] != n:
                raise CorpusError(
                    f"view {view.name!r}: {view.matrix.shape[0]} rows for {n} records")
        for attr in self.sensitive_attributes:
            if attr not in self.schema:
                raise CorpusError(f"sensitive attribute {attr!r} not in schema")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]

    def index_of(self, record_id: str) -> int:
        try:
            return self._index[record_id]
        except KeyError:
            raise KeyError(f"unknown record id {record_id!r}") from None

    def record(self, record_id: str) -> ImageRecord:
        return self.records[self.index_of(record_id)]

    def matching_indices(self, constraints: dict | None) -> list[int]:
        """Record indexes whose attributes satisfy every constraint.

        A constraint maps an attribute name to one allowed value or a
        collection of allowed values.
        """
        if not constraints:
            return list(range(len(self.records)))
        normalized = {}
        for attr, allowed in constraints.items():
            if attr not in self.schema:
                raise CorpusError(f"constraint references unknown attribute {attr!r}")
            if isinstance(allowed, str):
                allowed = {allowed}
            normalized[attr] = set(allowed)
        return [
            i for i, rec in enumerate(self.records)
            if all(rec.attributes[a] in vals for a, vals in normalized.items())
        ]

    def embedding_input(self, view_name: str | None = None,
                        view_weights: dict[str, float] | None = None) -> np.ndarray:
        """Base-embedding matrix feeding the projection network.

        Either one named view, or the concatenation of several views with
        each block scaled by its weight (zero-weight views are dropped).
        """
        if view_weights:
            blocks = []
            for name in sorted(view_weights):
                weight = view_weights[name]
                if weight < 0:
                    raise CorpusError(f"view weight for {name!r} must be nonnegative")
                if weight == 0:
                    continue
                if name not in self.views:
                    raise CorpusError(f"unknown view {name!r}")
                blocks.append(weight * self.views[name].matrix.astype(np.float64))
            if not blocks:
                raise CorpusError("view_weights must include at least one positive weight")
            return np.concatenate(blocks, axis=1)
        if view_name is None:
            view_name = default_view_name(self)
        if view_name not in self.views:
            raise CorpusError(f"unknown view {view_name!r}")
        return self.views[view_name].matrix.astype(np.float64)


def default_view_name(corpus: Corpus) -> str:
    """The disentangled-role view when present, else the first by name."""
    if not corpus.views:
        raise CorpusError("corpus has no embedding views")
    if "mix" in corpus.views:
        return "mix"
    return sorted(corpus.views)[0]


@dataclass
class SynthConfig:
    n: int
    schema: dict[str, int]  # attribute name -> class count
    views: list[tuple[str, int, float]]  # (name, dim, noise_sigma)
    seed: int = 0
    prototype_scale: float = 1.0
    sensitive_attributes: list[str] | None = None  # default: first two attributes

    def __post_init__(self) -> None:
        if self.n < 1:
            raise CorpusError(f"n must be >= 1, got {self.n}")
        if not self.schema:
            raise CorpusError("schema must define at least one attribute")
        for attr, classes in self.schema.items():
            if classes < 2:
                raise CorpusError(f"attribute {attr!r}: class count must be >= 2")
        for name, dim, sigma in self.views:
            if dim < 1:
                raise CorpusError(f"view {name!r}: dim must be >= 1")
            if sigma < 0:
                raise CorpusError(f"view {name!r}: noise_sigma must be >= 0")
        if self.prototype_scale <= 0:
            raise CorpusError("prototype_scale must be positive")


def synthesize_corpus(cfg: SynthConfig) -> Corpus:
    """Deterministic synthetic corpus with attribute-aligned embeddings.

    Every (attribute, class) pair gets one random unit prototype direction
    per view; a record's embedding is the scaled sum of its class prototypes
    plus isotropic Gaussian noise. Records sharing attribute values are
    therefore systematically closer in cosine similarity.
    """
    rng = np.random.default_rng(cfg.seed)
    attrs = sorted(cfg.schema)
    width = max(4, len(str(cfg.n - 1)))
    assignments = {attr: rng.integers(0, cfg.schema[attr], size=cfg.n) for attr in attrs}
    records = [
        ImageRecord(
            id=f"img{i:0{width}d}",
            attributes={attr: f"v{assignments[attr][i]}" for attr in attrs},
        )
        for i in range(cfg.n)
    ]
    schema = {attr: [f"v{c}" for c in range(cfg.schema[attr])] for attr in attrs}
    views = {}
    for name, dim, sigma in cfg.views:
        prototypes = {}
        for attr in attrs:
            for cls in range(cfg.schema[attr]):
                direction = rng.normal(size=dim)
                prototypes[(attr, cls)] = direction / np.linalg.norm(direction)
        signal = np.zeros((cfg.n, dim))
        for attr in attrs:
            classes = assignments[attr]
            for cls in range(cfg.schema[attr]):
                signal[classes == cls] += prototypes[(attr, cls)]
        matrix = cfg.prototype_scale * signal
        if sigma > 0:
            matrix = matrix + rng.normal(0.0, sigma, size=matrix.shape)
        views[name] = EmbeddingView(name=name, dim=dim, matrix=matrix.astype(np.float32))
    sensitive = cfg.sensitive_attributes
    if sensitive is None:
        sensitive = attrs[: min(2, len(attrs))]
    return Corpus(records=records, views=views, schema=schema,
                  sensitive_attributes=list(sensitive))


def stratified_sample(corpus: Corpus, constraints: dict | None, count: int,
                      rng: np.random.Generator) -> list[str]:
    """Constraint-filtered ids balanced round-robin over the cross-product of
    sensitive-attribute values.

    Cell visiting order and within-cell order are shuffled by `rng`; exhausted
    cells are skipped. Returns all matches when fewer than `count` exist.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    matches = corpus.matching_indices(constraints)
    if count == 0 or not matches:
        return []
    sensitive = corpus.sensitive_attributes
    if not sensitive:
        picked = rng.permutation(len(matches))[: min(count, len(matches))]
        return [corpus.records[matches[i]].id for i in picked]
    cell_values = [corpus.schema[attr] for attr in sensitive]
    cells: dict[tuple, list[int]] = {key: [] for key in product(*cell_values)}
    for idx in matches:
        rec = corpus.records[idx]
        cells[tuple(rec.attributes[attr] for attr in sensitive)].append(idx)
    queues = []
    for key in sorted(cells):
        members = cells[key]
        if members:
            order = rng.permutation(len(members))
            queues.append([members[i] for i in order])
    queue_order = rng.permutation(len(queues))
    queues = [queues[i] for i in queue_order]
    selected: list[int] = []
    depth = 0
    while len(selected) < count:
        advanced = False
        for queue in queues:
            if depth < len(queue):
                selected.append(queue[depth])
                advanced = True
                if len(selected) == count:
                    break
        if not advanced:
            break
        depth += 1
    return [corpus.records[i].id for i in selected]


def _write_matrix(path: Path, matrix: np.ndarray) -> str:
    n, dim = matrix.shape
    payload = _HEADER.pack(MAGIC, FORMAT_VERSION, n, dim)
    payload += np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    path.write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def _read_matrix(path: Path, view_name: str) -> np.ndarray:
    payload = path.read_bytes()
    if len(payload) < _HEADER.size:
        raise CorpusError(f"view {view_name!r}: truncated matrix file {path}")
    magic, version, n, dim = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CorpusError(f"view {view_name!r}: bad magic in {path}")
    if version != FORMAT_VERSION:
        raise CorpusError(f"view {view_name!r}: unsupported version {version}")
    expected = _HEADER.size + 4 * n * dim
    if len(payload) != expected:
        raise CorpusError(
            f"view {view_name!r}: file size {len(payload)} != expected {expected}")
    data = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size)
    return data.reshape(n, dim).copy()


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Write manifest.json plus one matrix file per view; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    view_entries = []
    for name in sorted(corpus.views):
        view = corpus.views[name]
        filename = f"view_{name}.fcpe"
        digest = _write_matrix(out / filename, view.matrix)
        view_entries.append(
            {"name": name, "dim": view.dim, "file": filename, "sha256": digest})
    manifest = {
        "format": "corpus-manifest-v1",
        "schema": {attr: list(values) for attr, values in sorted(corpus.schema.items())},
        "sensitive_attributes": list(corpus.sensitive_attributes),
        "records": [
            {"id": rec.id, "attributes": rec.attributes, "image_uri": rec.image_uri}
            for rec in corpus.records
        ],
        "views": view_entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_corpus(manifest_path) -> Corpus:
    """Load and fully validate a corpus; accepts the manifest or its directory."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "corpus-manifest-v1":
        raise CorpusError(f"unrecognized manifest format in {path}")
    records = [
        ImageRecord(id=entry["id"], attributes=dict(entry["attributes"]),
                    image_uri=entry.get("image_uri"))
        for entry in manifest["records"]
    ]
    views = {}
    for entry in manifest["views"]:
        matrix_path = path.parent / entry["file"]
        if not matrix_path.exists():
            raise FileNotFoundError(
                f"view {entry['name']!r}: missing matrix file {matrix_path}")
        payload = matrix_path.read_bytes()
        digest = hashlib.sha256(payload).hexdigest()
        if digest != entry["sha256"]:
            raise CorpusError(
                f"view {entry['name']!r}: sha256 mismatch for {matrix_path}")
        matrix = _read_matrix(matrix_path, entry["name"])
        if matrix.shape[1] != entry["dim"]:
            raise CorpusError(
                f"view {entry['name']!r}: dim {matrix.shape[1]} != manifest dim {entry['dim']}")
        views[entry["name"]] = EmbeddingView(
            name=entry["name"], dim=entry["dim"], matrix=matrix)
    return Corpus(
        records=records,
        views=views,
        schema={attr: list(vals) for attr, vals in manifest["schema"].items()},
        sensitive_attributes=list(manifest.get("sensitive_attributes", [])),
    )
