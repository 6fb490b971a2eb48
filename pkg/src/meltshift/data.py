"""Mutation records, dataset files, embedding bundles, and synthetic features.

File formats owned by this module
---------------------------------
Dataset (text): comma-delimited with header ``protein_id,wt_sequence,mutation,dtm``.
One row per labeled single-point mutation; ``mutation`` uses codes like
``I4A`` (wild-type residue, 1-based position, mutant residue) and ``dtm``
is the melting-temperature change in degrees Celsius.

Bundles (binary, "DTME", little-endian): a versioned container of named
embedding vectors. Layout::

    magic    4 bytes  b"DTME"
    version  u32      1
    d_raw    u32      width of every vector in the file
    count    u32      number of track records
    record   u16 id_len | id utf8 | u8 role_tag | d_raw * f32

Track roles and tags: seq_cls=0, seq_pos=1, struct_cls=2, struct_pos=3,
avg=4. Values are stored as float32 and upcast to float64 in memory.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
_AA_SET = frozenset(AMINO_ACIDS)

TRACK_ROLES = ("seq_cls", "seq_pos", "struct_cls", "struct_pos", "avg")
_ROLE_TO_TAG = {role: i for i, role in enumerate(TRACK_ROLES)}
_TAG_TO_ROLE = {i: role for i, role in enumerate(TRACK_ROLES)}

DATASET_HEADER = ["protein_id", "wt_sequence", "mutation", "dtm"]

DTME_MAGIC = b"DTME"
DTME_VERSION = 1


# ---------------------------------------------------------------------------
# mutations


@dataclass(frozen=True)
class Mutation:
    """Single-point substitution: 1-based position, wild and mutant residues."""

    position: int
    wild_aa: str
    mut_aa: str

    def __post_init__(self):
        if self.position < 1:
            raise DataError(f"mutation position must be >= 1, got {self.position}")
        for aa, what in ((self.wild_aa, "wild-type"), (self.mut_aa, "mutant")):
            if aa not in _AA_SET:
                raise DataError(f"non-canonical {what} residue {aa!r}")
        if self.wild_aa == self.mut_aa:
            raise DataError(
                f"no-op substitution {self.wild_aa}{self.position}{self.mut_aa}"
            )

    @property
    def code(self) -> str:
        return f"{self.wild_aa}{self.position}{self.mut_aa}"


def parse_mutation(code: str) -> Mutation:
    """Parse a code like ``I4A`` into a :class:`Mutation`."""
    if len(code) < 3 or not code[1:-1].isdigit():
        raise DataError(f"malformed mutation code {code!r}")
    try:
        return Mutation(int(code[1:-1]), code[0], code[-1])
    except DataError as exc:
        raise DataError(f"bad mutation code {code!r}: {exc}") from None


def format_mutation(mu: Mutation) -> str:
    return mu.code


def apply_mutation(seq: str, mu: Mutation) -> str:
    """Substitute the residue at the mutation position (1-based)."""
    if mu.position > len(seq):
        raise DataError(
            f"mutation {mu.code} out of range for sequence of length {len(seq)}"
        )
    found = seq[mu.position - 1]
    if found != mu.wild_aa:
        raise DataError(
            f"mutation {mu.code}: expected {mu.wild_aa} at position "
            f"{mu.position}, found {found}"
        )
    return seq[: mu.position - 1] + mu.mut_aa + seq[mu.position:]


# ---------------------------------------------------------------------------
# labeled records


@dataclass(frozen=True)
class MutationRecord:
    """One labeled sample: protein, wild-type sequence, mutation, dTm in C."""

    protein_id: str
    wt_sequence: str
    mutation: Mutation
    dtm: float

    def __post_init__(self):
        if not self.protein_id:
            raise DataError("empty protein_id")
        if not self.wt_sequence:
            raise DataError(f"{self.protein_id}: empty sequence")
        bad = set(self.wt_sequence) - _AA_SET
        if bad:
            raise DataError(
                f"{self.protein_id}: non-canonical residues {sorted(bad)}"
            )
        apply_mutation(self.wt_sequence, self.mutation)  # position/letter check
        if not np.isfinite(self.dtm):
            raise DataError(f"{self.protein_id} {self.mutation.code}: non-finite dtm")

    @property
    def mut_sequence(self) -> str:
        return apply_mutation(self.wt_sequence, self.mutation)

    @property
    def wt_variant_id(self) -> str:
        return f"{self.protein_id}:WT"

    @property
    def mut_variant_id(self) -> str:
        return f"{self.protein_id}:{self.mutation.code}"


def load_dataset(path) -> list[MutationRecord]:
    """Read a dataset file, validating every record. Errors carry line numbers."""
    records: list[MutationRecord] = []
    seen: set[tuple[str, str]] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset file") from None
        if header != DATASET_HEADER:
            raise DataError(
                f"{path}: bad header {header!r}, expected {DATASET_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            pid, seq, code, dtm_text = row
            try:
                dtm = float(dtm_text)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad dtm {dtm_text!r}") from None
            try:
                record = MutationRecord(pid, seq, parse_mutation(code), dtm)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            key = (pid, code)
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate record {pid} {code}")
            seen.add(key)
            records.append(record)
    return records


def write_dataset(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for r in records:
            writer.writerow([r.protein_id, r.wt_sequence, r.mutation.code,
                             repr(float(r.dtm))])


# ---------------------------------------------------------------------------
# embedding bundles


@dataclass
class EmbeddingBundle:
    """Named embedding tracks for one protein variant, all of width d_raw."""

    variant_id: str
    tracks: dict[str, np.ndarray]

    def validate(self) -> None:
        if not self.variant_id:
            raise DataError("bundle with empty variant_id")
        if not self.tracks:
            raise DataError(f"{self.variant_id}: bundle has no tracks")
        widths = set()
        for role, vec in self.tracks.items():
            if role not in _ROLE_TO_TAG:
                raise DataError(f"{self.variant_id}: unknown track role {role!r}")
            v = np.asarray(vec)
            if v.ndim != 1 or v.size == 0:
                raise DataError(f"{self.variant_id}/{role}: track must be 1-D")
            if not np.all(np.isfinite(v)):
                raise DataError(f"{self.variant_id}/{role}: non-finite entries")
            widths.add(v.shape[0])
        if len(widths) != 1:
            raise DataError(
                f"{self.variant_id}: inconsistent track widths {sorted(widths)}"
            )

    @property
    def d_raw(self) -> int:
        return next(iter(self.tracks.values())).shape[0]


def write_bundles(path, bundles: dict[str, EmbeddingBundle]) -> None:
    """Write a DTME file. Deterministic: records sorted by (id, role tag)."""
    d_raw = None
    for vid in sorted(bundles):
        b = bundles[vid]
        b.validate()
        if b.variant_id != vid:
            raise DataError(f"bundle key {vid!r} != variant_id {b.variant_id!r}")
        if d_raw is None:
            d_raw = b.d_raw
        elif b.d_raw != d_raw:
            raise DataError(
                f"{vid}: width {b.d_raw} differs from file width {d_raw}"
            )
    count = sum(len(bundles[vid].tracks) for vid in bundles)
    with open(path, "wb") as fh:
        fh.write(DTME_MAGIC)
        fh.write(struct.pack("<III", DTME_VERSION, d_raw or 0, count))
        for vid in sorted(bundles):
            b = bundles[vid]
            ident = vid.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise DataError(f"variant_id too long: {vid[:40]}...")
            for role in sorted(b.tracks, key=lambda r: _ROLE_TO_TAG[r]):
                fh.write(struct.pack("<H", len(ident)))
                fh.write(ident)
                fh.write(struct.pack("<B", _ROLE_TO_TAG[role]))
                fh.write(np.asarray(b.tracks[role], dtype="<f4").tobytes())


def read_bundles(path) -> dict[str, EmbeddingBundle]:
    """Read a DTME file back into float64 bundles keyed by variant_id."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != DTME_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at offset 0")
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header at offset {len(data)}")
    version, d_raw, count = struct.unpack_from("<III", data, 4)
    if version != DTME_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    offset = 16
    vec_bytes = 4 * d_raw
    tracks: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(count):
        if offset + 2 > len(data):
            raise FormatError(f"{path}: truncated record at offset {offset}")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + 1 + vec_bytes > len(data):
            raise FormatError(f"{path}: truncated record at offset {offset}")
        vid = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        tag = data[offset]
        offset += 1
        if tag not in _TAG_TO_ROLE:
            raise FormatError(f"{path}: unknown track tag {tag} at offset {offset - 1}")
        role = _TAG_TO_ROLE[tag]
        vec = np.frombuffer(data, dtype="<f4", count=d_raw, offset=offset)
        offset += vec_bytes
        per = tracks.setdefault(vid, {})
        if role in per:
            raise FormatError(f"{path}: duplicate track {vid}/{role}")
        per[role] = vec.astype(np.float64)
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes at {offset}")
    out = {}
    for vid, per in tracks.items():
        bundle = EmbeddingBundle(vid, per)
        bundle.validate()
        out[vid] = bundle
    return out


# ---------------------------------------------------------------------------
# deterministic synthetic embeddings


def _hash_values(seed: int, variant: str, role: str, sequence: str,
                 n: int) -> np.ndarray:
    """Counter-mode SHA-256 expansion into float32-representable values.

    Pure function of its arguments: byte-identical on every platform and
    numpy version, unlike Generator distribution methods.
    """
    key = f"{seed}|{variant}|{role}|{sequence}".encode("utf-8")
    vals: list[float] = []
    counter = 0
    while len(vals) < n:
        digest = hashlib.sha256(key + b"#" + counter.to_bytes(8, "little")).digest()
        for k in range(0, 32, 8):
            u = int.from_bytes(digest[k : k + 8], "little")
            vals.append(u / 2.0**63 - 1.0)  # uniform in [-1, 1)
        counter += 1
    return np.array(vals[:n]).astype(np.float32).astype(np.float64)


def synth_embed(record: MutationRecord, variant: str, d_raw: int, seed: int,
                modalities: tuple[str, ...] = ("seq",)) -> EmbeddingBundle:
    """Build a stand-in embedding bundle for desk-scale runs.

    ``variant`` is ``"WT"`` or ``"MUT"``. Tracks are a pure function of
    (sequence content, variant, role, seed); wild-type bundles therefore do
    not depend on which mutation a record carries, so one WT bundle serves
    every mutation of a protein. Real embeddings enter the pipeline through
    :func:`write_bundles` instead.
    """
    if d_raw < 1:
        raise DataError(f"d_raw must be >= 1, got {d_raw}")
    if variant not in ("WT", "MUT"):
        raise DataError(f"variant must be WT or MUT, got {variant!r}")
    seq = record.wt_sequence if variant == "WT" else record.mut_sequence
    vid = record.wt_variant_id if variant == "WT" else record.mut_variant_id
    roles = [f"{m}_{kind}" for m in modalities for kind in ("cls", "pos")]
    roles.append("avg")
    tracks = {role: _hash_values(seed, variant, role, seq, d_raw) for role in roles}
    return EmbeddingBundle(vid, tracks)


def synth_bundles(records, d_raw: int, seed: int,
                  modalities: tuple[str, ...] = ("seq",)) -> dict[str, EmbeddingBundle]:
    """WT bundle per protein (deduplicated) plus MUT bundle per record."""
    wt_seqs: dict[str, str] = {}
    for r in records:
        prior = wt_seqs.get(r.protein_id)
        if prior is not None and prior != r.wt_sequence:
            raise DataError(
                f"{r.protein_id}: conflicting wild-type sequences across records"
            )
        wt_seqs[r.protein_id] = r.wt_sequence
    bundles: dict[str, EmbeddingBundle] = {}
    for r in records:
        for variant, vid in (("WT", r.wt_variant_id), ("MUT", r.mut_variant_id)):
            if vid not in bundles:
                bundles[vid] = synth_embed(r, variant, d_raw, seed, modalities)
    return bundles
