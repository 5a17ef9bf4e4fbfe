"""Cross-validation folds over five databases per kind."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError
from ..rng import substream
from .manifest import KINDS, DatabaseManifest, Entry, by_kind

SPLITS = ("train", "matched", "mismatched")
TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class NoiseSegment:
    entry: Entry
    start: int  # samples, inclusive
    stop: int  # samples, exclusive


@dataclass
class Pools:
    """Items available to one split of one fold."""

    speech: list[Entry]
    noise: list[NoiseSegment]
    rooms: dict[tuple[str, str], list[Entry]]

    def check(self, what: str) -> None:
        if not self.speech or not self.noise or not self.rooms:
            raise ConfigError(f"{what}: empty speech, noise or BRIR pool")


@dataclass
class FoldPlan:
    """Database assignment and item splits for one fold.

    ``train_dbs`` / ``heldout_dbs`` map kind to database names. Speech and
    BRIR item splits are stored per database; noise recordings are split in
    time (first 80 % train, last 20 % test).
    """

    fold_index: int
    n_train: int
    seed: int
    train_dbs: dict[str, list[str]]
    heldout_dbs: dict[str, list[str]]
    item_splits: dict[str, dict[str, list[str]]] = field(default_factory=dict)
    train_hours: float = 10.0
    test_hours: float = 1.0

    def to_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "n_train": self.n_train,
            "seed": self.seed,
            "train_dbs": self.train_dbs,
            "heldout_dbs": self.heldout_dbs,
            "item_splits": self.item_splits,
            "train_hours": self.train_hours,
            "test_hours": self.test_hours,
        }

    def pools(self, manifests: dict[str, DatabaseManifest], split: str) -> Pools:
        """Speech, noise segments and BRIR rooms for ``split``.

        ``train`` and ``matched`` use the training databases' train and test
        portions; ``mismatched`` uses the test portions of held-out databases.
        """
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
        dbs = self.heldout_dbs if split == "mismatched" else self.train_dbs
        part = "train" if split == "train" else "test"
        speech = [manifests[db].get(i) for db in dbs["speech"] for i in self.item_splits[db][part]]
        noise = []
        for db in dbs["noise"]:
            for e in manifests[db].entries:
                n = len(e.load())
                cut = int(TRAIN_FRACTION * n)
                noise.append(NoiseSegment(e, 0, cut) if part == "train" else NoiseSegment(e, cut, n))
        rooms: dict[tuple[str, str], list[Entry]] = {}
        for db in dbs["brir"]:
            keep = set(self.item_splits[db][part])
            for room, entries in manifests[db].rooms().items():
                chosen = [e for e in entries if e.item_id in keep]
                if chosen:
                    rooms[(db, room)] = chosen
        return Pools(speech, noise, rooms)


def _split_items(m: DatabaseManifest, seed: int) -> dict[str, list[str]]:
    if m.kind == "speech":
        ids = sorted(e.item_id for e in m.entries)
        order = substream(seed, "speech-split", m.name).permutation(len(ids))
        n_train = int(round(TRAIN_FRACTION * len(ids)))
        if len(ids) >= 2:
            n_train = min(max(n_train, 1), len(ids) - 1)
        train = sorted(ids[i] for i in order[:n_train])
        test = sorted(ids[i] for i in order[n_train:])
        return {"train": train, "test": test}
    if m.kind == "brir":
        train, test = [], []
        for entries in m.rooms().values():
            for j, e in enumerate(entries):
                (train if j % 2 == 0 else test).append(e.item_id)
        return {"train": train, "test": test}
    return {"train": [], "test": []}


def build_folds(manifests: list[DatabaseManifest], n: int, seed: int = 0, *,
                train_hours: float = 10.0, test_hours: float = 1.0) -> list[FoldPlan]:
    """Five fold plans; fold ``i`` trains on database ``i`` (N=1) or on all but ``i`` (N=4).

    Database order within each kind follows the order of ``manifests``.
    """
    if n not in (1, 4):
        raise ConfigError(f"N must be 1 or 4, got {n}")
    groups = by_kind(manifests)
    for kind in KINDS:
        if len(groups[kind]) != 5:
            raise ConfigError(f"need exactly 5 {kind} databases, got {len(groups[kind])}")
    splits = {m.name: _split_items(m, seed) for m in manifests}
    plans = []
    for fold in range(1, 6):
        train, held = {}, {}
        for kind in KINDS:
            names = [m.name for m in groups[kind]]
            own = names[fold - 1]
            others = [x for x in names if x != own]
            train[kind], held[kind] = ([own], others) if n == 1 else (others, [own])
        plans.append(FoldPlan(fold, n, seed, train, held, splits, train_hours, test_hours))
    return plans


def select_fold(plans: list[FoldPlan], fold: int) -> FoldPlan:
    for p in plans:
        if p.fold_index == fold:
            return p
    raise ConfigError(f"fold must be in 1..5, got {fold}")

