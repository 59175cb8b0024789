"""Function library: round trips, integrity, context rendering."""

from __future__ import annotations

import json

import pytest

from autotools.errors import ManifestCorrupt, UnknownName
from autotools.funclib import (
    FunctionLibrary,
    FunctionRecord,
    Provenance,
    load_library,
    render_context,
    save_library,
)

from conftest import GOOD_SEARCH_PERSON


def make_library(tmdb_doc=None) -> FunctionLibrary:
    lib = FunctionLibrary(
        created_with={"backend_id": "scripted", "templates": "sha256:t"},
        toolset_hash="sha256:x",
    )
    lib.add(
        FunctionRecord(
            name="search_person",
            source=GOOD_SEARCH_PERSON,
            demo='print(search_person("Nolan"))',
            result_kind="json_map",
            status="Verified",
            provenance=Provenance(attempts=1, tokens_spent=120, verified_at_pass=1),
            origin_doc=tmdb_doc,
        )
    )
    lib.add(
        FunctionRecord(
            name="get_movie_credits",
            source='def get_movie_credits(person_id: int) -> dict:\n    """Credits."""\n    return {}',
            demo="print(get_movie_credits(1))",
            result_kind="json_map",
            status="Verified",
        )
    )
    lib.add(
        FunctionRecord(
            name="hopeless",
            source="def hopeless():\n    return None",
            status="Failed",
            provenance=Provenance(attempts=3, failure_reason="never verified"),
        )
    )
    return lib


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path, tmdb_doc):
        lib = make_library(tmdb_doc)
        save_library(lib, tmp_path / "library")
        loaded = load_library(tmp_path / "library")
        assert loaded.records == lib.records
        assert loaded.created_with == lib.created_with
        assert loaded.toolset_hash == lib.toolset_hash

    def test_manifest_edit_detected(self, tmp_path):
        save_library(make_library(), tmp_path / "library")
        manifest = tmp_path / "library" / "manifest.json"
        data = json.loads(manifest.read_text())
        data["toolset_hash"] = "sha256:tampered"
        manifest.write_text(json.dumps(data, indent=2, sort_keys=True))
        with pytest.raises(ManifestCorrupt, match="digest"):
            load_library(tmp_path / "library")

    def test_source_edit_detected(self, tmp_path):
        save_library(make_library(), tmp_path / "library")
        src = tmp_path / "library" / "functions" / "search_person.src"
        src.write_text(src.read_text() + "\n# tampered")
        with pytest.raises(ManifestCorrupt, match="search_person"):
            load_library(tmp_path / "library")

    def test_load_empty_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_library(tmp_path)

    def test_save_replaces_existing_atomically(self, tmp_path):
        lib = make_library()
        save_library(lib, tmp_path / "library")
        del lib.records["hopeless"]
        save_library(lib, tmp_path / "library")
        loaded = load_library(tmp_path / "library")
        assert "hopeless" not in loaded.records

    def test_counts_support_summary_reporting(self):
        counts = make_library().counts()
        assert counts == {"SyntaxChecked": 0, "Verified": 2, "Failed": 1}


class TestInvariants:
    def test_verified_requires_demo(self):
        with pytest.raises(ValueError, match="usage demo"):
            FunctionRecord(name="f", source="def f(): ...", status="Verified")

    def test_verified_source_must_be_loadable(self):
        with pytest.raises(ValueError, match="not loadable"):
            FunctionRecord(name="f", source="def f(:\n    pass", demo="f()", status="Verified")

    def test_duplicate_names_rejected(self):
        lib = FunctionLibrary()
        lib.add(FunctionRecord(name="f", source="def f(): ..."))
        with pytest.raises(ValueError, match="duplicate"):
            lib.add(FunctionRecord(name="f", source="def f(): ..."))


class TestRenderContext:
    def test_all_verified_alphabetical(self):
        ctx = render_context(make_library())
        assert ctx.text.index("get_movie_credits") < ctx.text.index("search_person")
        assert "hopeless" not in ctx.text
        assert ctx.length == len(ctx.text)

    def test_subset(self):
        ctx = render_context(make_library(), subset=["search_person"])
        assert "search_person" in ctx.text
        assert "get_movie_credits" not in ctx.text

    def test_failed_record_not_renderable(self):
        with pytest.raises(UnknownName, match="hopeless"):
            render_context(make_library(), subset=["hopeless"])

    def test_each_name_rendered_once(self):
        ctx = render_context(make_library())
        assert ctx.text.count("# ==== function: search_person ====") == 1

    def test_pure(self):
        assert render_context(make_library()) == render_context(make_library())
