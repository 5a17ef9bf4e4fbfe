"""Database manifests: CSV ingestion, validation and cached audio access."""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from ..errors import ConfigError, DataError
from ..spectral import read_wav

KINDS = ("speech", "noise", "brir")
COLUMNS = ("database", "kind", "path", "item_id", "room", "angle_deg")


@dataclass(frozen=True)
class Entry:
    database: str
    kind: str
    path: Path
    item_id: str
    room: str | None = None
    angle_deg: float | None = None

    def load(self) -> np.ndarray:
        return load_audio(str(self.path))


@dataclass
class DatabaseManifest:
    """One database of a single kind."""

    name: str
    kind: str
    entries: list[Entry] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"database {self.name!r}: unknown kind {self.kind!r}")
        ids = [e.item_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"database {self.name!r}: duplicate item ids")
        self._by_id = {e.item_id: e for e in self.entries}

    def get(self, item_id: str) -> Entry:
        try:
            return self._by_id[item_id]
        except KeyError:
            raise DataError(f"database {self.name!r} has no item {item_id!r}") from None

    def rooms(self) -> dict[str, list[Entry]]:
        """BRIR entries grouped by room, each group sorted by angle."""
        out: dict[str, list[Entry]] = {}
        for e in self.entries:
            out.setdefault(e.room, []).append(e)
        return {r: sorted(v, key=lambda e: (e.angle_deg, e.item_id)) for r, v in sorted(out.items())}

    def validate(self, sample_rate: int = 16000, check_files: bool = True) -> None:
        if not self.entries:
            raise ConfigError(f"database {self.name!r} is empty")
        for e in self.entries:
            if self.kind == "brir":
                if e.room is None or e.angle_deg is None:
                    raise ConfigError(f"{self.name}/{e.item_id}: BRIR entries need room and angle_deg")
                if not -90.0 <= e.angle_deg <= 90.0:
                    raise ConfigError(f"{self.name}/{e.item_id}: angle {e.angle_deg} outside [-90, 90]")
            if check_files:
                if not e.path.is_file():
                    raise DataError(f"{self.name}/{e.item_id}: missing file {e.path}")
                rate, _ = wavfile.read(e.path, mmap=True)
                if rate != sample_rate:
                    raise DataError(f"{e.path}: sample rate {rate} Hz, expected {sample_rate} Hz")


@functools.lru_cache(maxsize=512)
def load_audio(path: str) -> np.ndarray:
    x = read_wav(path)
    x.setflags(write=False)
    return x


def read_manifest(path) -> list[DatabaseManifest]:
    """Parse a manifest CSV into one :class:`DatabaseManifest` per database.

    Relative ``path`` values resolve against the manifest's directory. Errors
    name the offending line.
    """
    path = Path(path)
    base = path.parent
    groups: dict[str, list[Entry]] = {}
    kinds: dict[str, str] = {}
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ConfigError(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}:1: missing columns {sorted(missing)}")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            db, kind = row["database"].strip(), row["kind"].strip()
            if not db or kind not in KINDS:
                raise ConfigError(f"{where}: need a database name and kind in {KINDS}")
            if kinds.setdefault(db, kind) != kind:
                raise ConfigError(f"{where}: database {db!r} mixes kinds")
            try:
                angle = float(row["angle_deg"]) if row["angle_deg"].strip() else None
            except ValueError:
                raise ConfigError(f"{where}: angle_deg {row['angle_deg']!r} is not a number") from None
            p = Path(row["path"].strip())
            groups.setdefault(db, []).append(Entry(
                database=db, kind=kind, path=p if p.is_absolute() else base / p,
                item_id=row["item_id"].strip(), room=row["room"].strip() or None, angle_deg=angle,
            ))
    try:
        return [DatabaseManifest(db, kinds[db], entries) for db, entries in groups.items()]
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def write_manifest(path, manifests) -> None:
    """Write manifests as CSV with paths relative to the file when possible."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for m in manifests:
            for e in m.entries:
                try:
                    rel = e.path.relative_to(path.parent)
                except ValueError:
                    rel = e.path
                w.writerow([e.database, e.kind, rel.as_posix(), e.item_id, e.room or "",
                            "" if e.angle_deg is None else repr(float(e.angle_deg))])


def by_kind(manifests) -> dict[str, list[DatabaseManifest]]:
    out: dict[str, list[DatabaseManifest]] = {k: [] for k in KINDS}
    for m in manifests:
        out[m.kind].append(m)
    return out


def index_manifests(manifests) -> dict[str, DatabaseManifest]:
    names = [m.name for m in manifests]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate database names across manifests")
    return {m.name: m for m in manifests}
