"""Synthetic banished-books dataset.

A deterministic stand-in for a public open-data catalogue: records describe
books published 1800-1945. The generator is pure in (seed, size) so every
service, oracle and test sees byte-identical data.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass

YEAR_MIN = 1800
YEAR_MAX = 1945

_FIRST_NAMES = (
    "Anna", "Bertolt", "Clara", "Erich", "Franz", "Heinrich", "Irmgard", "Joseph",
    "Kurt", "Lion", "Nelly", "Oskar", "Rosa", "Stefan", "Thomas", "Vicki",
)
_SURNAMES = (
    "Arnold", "Baum", "Doeblin", "Feuchtwanger", "Glaeser", "Kaestner", "Kisch",
    "Lampel", "Mann", "Ossietzky", "Remarque", "Seghers", "Toller", "Tucholsky",
    "Werfel", "Zweig",
)
_TITLE_HEADS = (
    "The Archive", "A Chronicle", "The Garden", "Letters", "The Machine", "Notes",
    "The Question", "Shadows", "The Station", "Voices", "The Winter", "Songs",
)
_TITLE_TAILS = (
    "of Ashes", "of the Border", "of the City", "of Exile", "of Glass",
    "of the Harbor", "of Iron", "of the North", "of Paper", "of the Republic",
    "of Silence", "of Tomorrow",
)
_CITIES = (
    "Berlin", "Breslau", "Dresden", "Frankfurt", "Hamburg", "Koenigsberg",
    "Leipzig", "Munich", "Prague", "Vienna",
)
_PUBLISHERS = (
    "Aufbruch Verlag", "Brandt & Sohn", "Europa Press", "Hansa Haus",
    "Lindenhof Verlag", "Malik Press", "Neuer Weg", "Quelle & Co",
    "Spree Verlag", "Ullstein Haus",
)


@dataclass(frozen=True)
class BookRecord:
    id: int
    title: str
    author: str
    first_name: str
    year: int
    city: str
    publisher: str

    def as_dict(self) -> dict:
        return asdict(self)


FIELD_NAMES = tuple(BookRecord.__dataclass_fields__)
INT_FIELDS = frozenset({"id", "year"})


@dataclass(frozen=True)
class Dataset:
    records: tuple[BookRecord, ...]
    seed: int
    size: int

    def as_dicts(self) -> list[dict]:
        return [record.as_dict() for record in self.records]


def generate_dataset(seed: int, size: int) -> Dataset:
    """Deterministic record list; identical (seed, size) gives identical output."""
    if size < 0:
        raise ValueError("size >= 0 required")
    rng = random.Random(seed)
    records = tuple(
        BookRecord(
            id=i + 1,
            title=f"{rng.choice(_TITLE_HEADS)} {rng.choice(_TITLE_TAILS)}",
            author=rng.choice(_SURNAMES),
            first_name=rng.choice(_FIRST_NAMES),
            year=rng.randint(YEAR_MIN, YEAR_MAX),
            city=rng.choice(_CITIES),
            publisher=rng.choice(_PUBLISHERS),
        )
        for i in range(size)
    )
    return Dataset(records=records, seed=seed, size=size)
