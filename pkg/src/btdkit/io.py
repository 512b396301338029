"""Binary tensor containers, experiment configuration, synthetic problem
generation, and result export.

Container format ("GBTD", little-endian throughout)::

    bytes 0..3    magic b"GBTD"
    bytes 4..7    format version (uint32); this implementation writes 1
    byte  8       element type (uint8); 0 = float64
    bytes 9..12   tensor order d (uint32)
    then          d dimension sizes (uint64 each)
    then          prod(dims) float64 payload in column-major entry order
    optionally    metadata block: uint64 byte length + UTF-8 JSON

Malformed inputs raise one of three distinct errors: not a container at
all (bad magic / header too short), a container from an unknown format
revision, or a container whose payload ends early.

Exports write CSV with floats at full round-trip precision (%.17g) or
JSON; a trace aggregator reduces repeated runs to per-iteration medians.
"""

from __future__ import annotations

import dataclasses
import io as _stdio
import json
import struct
import zipfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataFormatError,
    TruncatedPayloadError,
    UnknownVersionError,
)
from .model import (
    BlockTermModel,
    GroupSpec,
    LrTerm,
    TuckerTerm,
    build_glro,
    build_gtld,
    build_tld,
    init_random,
    reconstruct,
)
from .constraints import project_model

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "container_bytes",
    "decode_container",
    "save_container",
    "load_container",
    "ExperimentConfig",
    "build_template",
    "synth_generate",
    "export_table",
    "export_trace",
    "aggregate_traces",
    "save_model",
    "load_model",
]

MAGIC = b"GBTD"
FORMAT_VERSION = 1
_ELEM_FLOAT64 = 0


# ---------------------------------------------------------------------------
# containers


def container_bytes(tensor, metadata=None):
    """Encode a dense tensor (float64) as container bytes."""
    tensor = np.asarray(tensor, dtype="<f8")
    header = MAGIC + struct.pack("<IBI", FORMAT_VERSION, _ELEM_FLOAT64, tensor.ndim)
    dims = struct.pack(f"<{tensor.ndim}Q", *tensor.shape)
    blob = header + dims + np.ravel(tensor, order="F").tobytes()
    if metadata is not None:
        enc = json.dumps(metadata, sort_keys=True).encode("utf-8")
        blob += struct.pack("<Q", len(enc)) + enc
    return blob


def save_container(path, tensor, metadata=None):
    """Write a dense tensor (float64) with optional JSON metadata."""
    with open(path, "wb") as fh:
        fh.write(container_bytes(tensor, metadata))


def _read_exact(buf, n, what):
    out = buf.read(n)
    if len(out) != n:
        raise TruncatedPayloadError(f"container ends inside its {what}")
    return out


def decode_container(data):
    """Decode container bytes as ``(tensor, metadata_or_None)``."""
    buf = _stdio.BytesIO(data)
    head = buf.read(4)
    if len(head) < 4 or head != MAGIC:
        raise BadMagicError("not a GBTD container")
    rest = buf.read(9)
    if len(rest) < 9:
        raise BadMagicError("not a GBTD container: header too short")
    version, elem, order = struct.unpack("<IBI", rest)
    if version != FORMAT_VERSION:
        raise UnknownVersionError(f"unsupported container version {version}")
    if elem != _ELEM_FLOAT64:
        raise DataFormatError(f"unsupported element type code {elem}")
    dims_raw = _read_exact(buf, 8 * order, "dimension list")
    dims = struct.unpack(f"<{order}Q", dims_raw) if order else ()
    count = int(np.prod(dims)) if order else 1
    payload = _read_exact(buf, 8 * count, "payload")
    flat = np.frombuffer(payload, dtype="<f8", count=count)
    tensor = np.reshape(flat, dims, order="F").copy()
    metadata = None
    trailer = buf.read()
    if trailer:
        if len(trailer) < 8:
            raise TruncatedPayloadError("container ends inside its metadata length")
        (meta_len,) = struct.unpack("<Q", trailer[:8])
        if len(trailer) - 8 < meta_len:
            raise TruncatedPayloadError("container ends inside its metadata block")
        try:
            metadata = json.loads(trailer[8:8 + meta_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"corrupt container metadata: {exc}") from exc
        if len(trailer) - 8 != meta_len:
            raise DataFormatError("container has trailing bytes after its metadata")
    return tensor, metadata


def load_container(path):
    """Read a container file back as ``(tensor, metadata_or_None)``."""
    with open(path, "rb") as fh:
        return decode_container(fh.read())


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    """One synthetic-problem / fitting setup, JSON round-trippable.

    ``lr_ranks``/``tucker_ranks`` describe the *fitted* model; grouped
    flavors derive their term count from ``n_objects`` and take the group
    mode size from ``dims[-1]``.
    """

    dims: tuple = (20, 20, 20)
    flavor: str = "tld"  # 'tld' | 'glro' | 'gtld'
    lr_ranks: tuple = (3, 3, 3, 3, 3)
    n_full_modes: int = 2
    tucker_ranks: tuple = ((3, 3, 3),)  # tld: one tuple per Tucker term; gtld: modes 0..d-2
    n_objects: int | None = None
    modes_of_interest: tuple = (0,)
    p_cum: float | None = None
    p_min: float | None = None
    constraint: str = "none"  # 'none' | 'projected' | 'lagrange'
    method: str = "als"
    max_iters: int = 1000
    grad_tol: float = 1e-8
    step_tol: float = 1e-12
    residual_tol: float = 0.0
    seed: int = 0
    init_scale: float = 1.0
    noise_snr_db: float | None = None  # None: noiseless target

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.lr_ranks = tuple(int(r) for r in self.lr_ranks)
        self.modes_of_interest = tuple(int(g) for g in self.modes_of_interest)
        if self.flavor == "tld":
            self.tucker_ranks = tuple(tuple(int(r) for r in rr) for rr in self.tucker_ranks)
        else:
            self.tucker_ranks = tuple(int(r) for r in np.ravel(list(self.tucker_ranks)))
        self.validate()

    def validate(self):
        if self.flavor not in ("tld", "glro", "gtld"):
            raise ConfigError(f"unknown flavor {self.flavor!r}")
        if self.constraint not in ("none", "projected", "lagrange"):
            raise ConfigError(f"unknown constraint scheme {self.constraint!r}")
        if not 1 <= self.n_full_modes <= len(self.dims) - 1:
            raise ConfigError("n_full_modes must lie in 1..d-1")
        if self.flavor == "tld":
            if self.constraint != "none":
                raise ConfigError("constraints require a grouped flavor")
            for rr in self.tucker_ranks:
                if len(rr) != len(self.dims):
                    raise ConfigError("each tld Tucker term needs one rank per mode")
        else:
            n = self.n_objects
            if n is None:
                raise ConfigError(f"{self.flavor} needs n_objects")
            if self.dims[-1] != n:
                raise ConfigError("grouped flavors need dims[-1] == n_objects")
            expect = n + 1 if self.flavor == "glro" else n
            if len(self.lr_ranks) != expect:
                raise ConfigError(f"{self.flavor} needs {expect} lr_ranks entries")
            for g in self.modes_of_interest:
                if not 0 <= g < self.n_full_modes:
                    raise ConfigError("modes_of_interest must be full-factor modes")

    def group_spec(self):
        if self.flavor == "tld":
            return None
        return GroupSpec(
            n_objects=int(self.n_objects),
            flavor=self.flavor,
            modes_of_interest=self.modes_of_interest,
            p_cum=self.p_cum,
            p_min=self.p_min,
        )

    def to_json(self, path=None):
        raw = dataclasses.asdict(self)
        text = json.dumps(raw, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source):
        """Accepts a JSON string or a path to a JSON file."""
        text = source
        if not str(source).lstrip().startswith("{"):
            try:
                with open(source, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {source}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


def build_template(config):
    """Zero model matching ``config`` (the shape ALS/NLLS fitting starts
    from once randomized)."""
    if config.flavor == "tld":
        return build_tld(config.dims, config.lr_ranks, config.n_full_modes,
                         config.tucker_ranks)
    group = config.group_spec()
    if config.flavor == "glro":
        return build_glro(config.dims, config.lr_ranks, config.n_full_modes, group)
    return build_gtld(config.dims, config.lr_ranks, config.n_full_modes,
                      config.tucker_ranks, group)


def synth_generate(config, seed=None):
    """Draw a ground-truth model and its dense tensor.

    The truth is a random instance of the configured model (projected to
    feasibility for grouped flavors); optional Gaussian noise is added at
    the configured SNR.  Returns ``(target, truth_model)``.
    """
    seed = config.seed if seed is None else seed
    template = build_template(config)
    # distinct stream from fitting inits, so a fit seeded the same way does
    # not start at the planted solution
    truth = init_random(template, np.random.default_rng((int(seed), 0x7257)), config.init_scale)
    if config.flavor != "tld":
        truth = project_model(truth)
    target = reconstruct(truth)
    if config.noise_snr_db is not None:
        rng = np.random.default_rng((int(seed), 0x5EED))
        noise = rng.standard_normal(target.shape)
        signal = np.linalg.norm(target.ravel())
        scale = signal / (np.linalg.norm(noise.ravel()) * 10 ** (config.noise_snr_db / 20))
        target = target + scale * noise
    return target, truth


# ---------------------------------------------------------------------------
# result export


def _fmt_float(x):
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def export_table(rows, path, fmt="csv", columns=None):
    """Write a list of dict rows to CSV (floats at %.17g) or JSON.

    Column order: ``columns`` if given, else first-row key order.
    """
    rows = list(rows)
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
        return
    if fmt != "csv":
        raise ConfigError(f"unknown export format {fmt!r}")
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_float(row.get(c, "")) for c in columns) + "\n")


def export_trace(trace, path, fmt="csv"):
    """Write one optimizer trace with its natural column order."""
    export_table(trace.rows(), path, fmt=fmt, columns=trace.columns())


def aggregate_traces(traces, fields=("objective", "grad_norm")):
    """Per-iteration medians across runs.

    Shorter runs are held at their final value (a converged run keeps its
    converged objective), so iteration ``t`` always aggregates the state
    of every run at ``t``.  Returns rows with ``iteration`` plus a
    ``median_<field>`` per requested field.
    """
    if not traces:
        return []
    length = max(len(t) for t in traces)
    rows = []
    for it in range(length):
        row = {"iteration": it}
        for name in fields:
            vals = []
            for t in traces:
                recs = t.records
                rec = recs[it] if it < len(recs) else recs[-1]
                vals.append(getattr(rec, name))
            row[f"median_{name}"] = float(np.median(vals))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# model serialization


def _zip_write(zf, name, blob):
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.external_attr = 0o644 << 16
    zf.writestr(info, blob)


def save_model(path, model):
    """Serialize a model as a zip of one container per factor/vector/core
    plus a manifest.  Byte-identical for identical models (fixed
    timestamps, sorted manifest)."""
    manifest = {
        "format": "btdkit-model",
        "version": 1,
        "dims": list(model.dims),
        "group": None,
        "lr_terms": [],
        "tucker_terms": [],
    }
    if model.group is not None:
        g = model.group
        manifest["group"] = {
            "n_objects": g.n_objects,
            "flavor": g.flavor,
            "modes_of_interest": list(g.modes_of_interest),
            "p_cum": g.p_cum,
            "p_min": g.p_min,
        }
    blobs = {}
    for s, t in enumerate(model.lr_terms):
        entry = {"n_full_modes": t.n_full_modes, "rank": t.rank,
                 "vector_free": list(t.vector_free), "factors": [], "vectors": []}
        for k, f in enumerate(t.factors):
            name = f"lr{s}_factor{k}.gbtd"
            blobs[name] = container_bytes(f)
            entry["factors"].append(name)
        for j, v in enumerate(t.vectors):
            name = f"lr{s}_vector{t.n_full_modes + j}.gbtd"
            blobs[name] = container_bytes(v)
            entry["vectors"].append(name)
        manifest["lr_terms"].append(entry)
    for m, t in enumerate(model.tucker_terms):
        entry = {"diag_modes": sorted(t.diag_modes), "factors": [],
                 "core": f"tucker{m}_core.gbtd"}
        for k, a in enumerate(t.factors):
            name = f"tucker{m}_factor{k}.gbtd"
            blobs[name] = container_bytes(a)
            entry["factors"].append(name)
        blobs[entry["core"]] = container_bytes(t.core)
        manifest["tucker_terms"].append(entry)

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _zip_write(zf, "manifest.json",
                   json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"))
        for name in sorted(blobs):
            _zip_write(zf, name, blobs[name])


def load_model(path):
    """Inverse of :func:`save_model`."""
    with zipfile.ZipFile(path, "r") as zf:
        try:
            manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        except KeyError as exc:
            raise DataFormatError("model archive has no manifest.json") from exc
        if manifest.get("format") != "btdkit-model":
            raise DataFormatError("not a btdkit model archive")
        if manifest.get("version") != 1:
            raise UnknownVersionError(
                f"unsupported model archive version {manifest.get('version')}"
            )

        def tensor_of(name):
            return decode_container(zf.read(name))[0]

        dims = tuple(manifest["dims"])
        lr_terms = []
        for entry in manifest["lr_terms"]:
            factors = tuple(tensor_of(n) for n in entry["factors"])
            vectors = tuple(tensor_of(n) for n in entry["vectors"])
            lr_terms.append(LrTerm(factors, vectors, tuple(entry["vector_free"])))
        tucker_terms = []
        for entry in manifest["tucker_terms"]:
            factors = tuple(tensor_of(n) for n in entry["factors"])
            core = tensor_of(entry["core"])
            tucker_terms.append(TuckerTerm(core, factors, frozenset(entry["diag_modes"])))
        group = None
        if manifest["group"] is not None:
            g = manifest["group"]
            group = GroupSpec(n_objects=g["n_objects"], flavor=g["flavor"],
                              modes_of_interest=tuple(g["modes_of_interest"]),
                              p_cum=g["p_cum"], p_min=g["p_min"])
    return BlockTermModel(dims, tucker_terms, lr_terms, group)
