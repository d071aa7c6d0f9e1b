import pytest

from dbchat import kb as kb_mod
from dbchat.encoder import HashEmbedder
from dbchat.ingest import SourceDocument, split_document
from dbchat.text2sql import (
    ForeignKeyLink,
    SchemaDescription,
    TableDescription,
    build_fixture_db,
)

# The canonical concert_singer instruction text used by the corpus format.
# The final three sentences follow the corpus fixture verbatim, including its
# idiosyncratic foreign-key pairings.
CONCERT_SINGER_INSTRUCTION = (
    "concert_singer contains tables such as stadium, singer, concert, singer_in_concert. "
    "Table stadium has columns such as stadium_id, location, name, capacity, highest, "
    "lowest, average. stadium_id is the primary key. "
    "Table singer has columns such as singer_id, name, country, song_name, "
    "song_release_year, age, is_male. singer_id is the primary key. "
    "Table concert has columns such as concert_id, concert_name, theme, stadium_id, year. "
    "concert_id is the primary key. "
    "Table singer_in_concert has columns such as concert_id, singer_id. "
    "concert_id is the primary key. "
    "The year of concert is the foreign key of location of stadium. "
    "The stadium_id of singer_in_concert is the foreign key of name of singer. "
    "The singer_id of singer_in_concert is the foreign key of concert_name of concert."
)


def corpus_concert_singer_schema() -> SchemaDescription:
    """Hand-built schema matching the corpus instruction text byte for byte.

    Deliberately not validated: the corpus text names singer_in_concert.stadium_id
    in a foreign-key sentence although that table has no such column.
    """
    return SchemaDescription(
        db_id="concert_singer",
        tables=[
            TableDescription(
                "stadium",
                [("stadium_id", "INTEGER"), ("location", "TEXT"), ("name", "TEXT"),
                 ("capacity", "INTEGER"), ("highest", "INTEGER"), ("lowest", "INTEGER"),
                 ("average", "INTEGER")],
                ["stadium_id"],
            ),
            TableDescription(
                "singer",
                [("singer_id", "INTEGER"), ("name", "TEXT"), ("country", "TEXT"),
                 ("song_name", "TEXT"), ("song_release_year", "TEXT"), ("age", "INTEGER"),
                 ("is_male", "INTEGER")],
                ["singer_id"],
            ),
            TableDescription(
                "concert",
                [("concert_id", "INTEGER"), ("concert_name", "TEXT"), ("theme", "TEXT"),
                 ("stadium_id", "INTEGER"), ("year", "TEXT")],
                ["concert_id"],
            ),
            TableDescription(
                "singer_in_concert",
                [("concert_id", "INTEGER"), ("singer_id", "INTEGER")],
                ["concert_id"],
            ),
        ],
        foreign_keys=[
            ForeignKeyLink("concert", "year", "stadium", "location"),
            ForeignKeyLink("singer_in_concert", "stadium_id", "singer", "name"),
            ForeignKeyLink("singer_in_concert", "singer_id", "concert", "concert_name"),
        ],
    )


@pytest.fixture(scope="session")
def concert_singer_db(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("dbs") / "concert_singer.db"
    build_fixture_db("concert_singer", path)
    return str(path)


@pytest.fixture(scope="session")
def db_dir(concert_singer_db) -> str:
    from pathlib import Path

    return str(Path(concert_singer_db).parent)


def make_docs(texts: list[str], prefix: str = "doc") -> list[SourceDocument]:
    return [
        SourceDocument(f"{prefix}{i}", f"{prefix}{i}", "plain", text, "en")
        for i, text in enumerate(texts)
    ]


def build_kb(texts: list[str], dimension: int = 64, name: str = "test") -> kb_mod.KnowledgeBase:
    embedder = HashEmbedder(dimension)
    kb = kb_mod.KnowledgeBase(name, dimension)
    chunks = []
    for doc in make_docs(texts):
        chunks.extend(split_document(doc, 512, 64))
    kb_mod.index_chunks(kb, chunks, embedder)
    return kb


def seeded_pii_values() -> dict[str, list[str]]:
    """Generated identifier instances, one list per mask rule."""
    emails = [f"user{i}@example.com" for i in range(8)]
    phones = [f"+1-555-{200 + i:03d}-{4000 + i:04d}" for i in range(8)]
    cards = [f"4111-1111-1111-{1100 + i:04d}" for i in range(8)]
    ids = [str(100200300400500 + i) for i in range(8)]
    return {"email": emails, "phone": phones, "card": cards, "id": ids}
