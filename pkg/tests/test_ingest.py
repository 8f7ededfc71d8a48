from __future__ import annotations

import os
from pathlib import Path

import pytest

from reprorun.ingest import (
    DataverseClient,
    IngestError,
    fetch_many,
    fetch_package,
    list_packages,
    load_local_package,
    load_manifest,
    package_slug,
    save_manifest,
    verify_checksums,
)
from mock_dataverse import MockDataset, MockDataverse, MockFile

from conftest import make_package


def fixture_corpus() -> list[MockDataset]:
    """12 datasets, 10 of which contain at least one .R file."""
    datasets = []
    for i in range(10):
        datasets.append(
            MockDataset(
                persistent_id=f"doi:10.5072/FK2/R{i:03d}",
                title=f"R study {i}",
                subjects=["Social Sciences"],
                dataverse_name="JournalA" if i % 2 else "JournalB",
                files=[
                    MockFile(f"analysis_{i}.R", f"x <- {i}\nprint(x)\n".encode()),
                    MockFile("data.csv", b"a,b\n1,2\n"),
                ],
            )
        )
    datasets.append(
        MockDataset(persistent_id="doi:10.5072/FK2/NORCODE1", title="stata only",
                    files=[MockFile("model.do", b"regress y x\n")])
    )
    datasets.append(
        MockDataset(persistent_id="doi:10.5072/FK2/NORCODE2", title="data only",
                    files=[MockFile("data.csv", b"1,2\n")])
    )
    return datasets


@pytest.fixture(scope="module")
def server():
    with MockDataverse(fixture_corpus()) as mock:
        yield mock


def test_list_packages_filters_r_code(server):
    refs = list_packages(server.base_url, "fileName:*.R", limit=10)
    assert len(refs) == 10
    assert all(ref.persistent_id.startswith("doi:") for ref in refs)
    assert all("R" in ref.persistent_id for ref in refs)


def test_list_packages_zero_limit(server):
    assert list_packages(server.base_url, "fileName:*.R", limit=0) == []


def test_list_packages_paginates_internally(server, monkeypatch):
    client = DataverseClient(server.base_url)
    calls = []
    original = client.search

    def spy(query, start, per_page):
        calls.append(start)
        return original(query, start=start, per_page=min(per_page, 3))

    monkeypatch.setattr(client, "search", spy)
    refs = list_packages(server.base_url, "fileName:*.R", limit=10, client=client)
    assert len(refs) == 10
    assert len(calls) > 1  # needed several pages


def test_list_packages_metadata_mapping(server):
    refs = list_packages(server.base_url, "*", limit=12)
    assert len(refs) == 12
    ref = refs[0]
    assert ref.metadata["journal"] in ("JournalA", "JournalB", "Root")
    assert ref.title


def test_list_packages_network_failure_is_retryable_error():
    from reprorun.ingest import NetworkError

    client = DataverseClient("http://127.0.0.1:1", retries=2, backoff=0.01, timeout=0.3)
    with pytest.raises(NetworkError):
        list_packages("http://127.0.0.1:1", "*", limit=3, client=client)


def test_fetch_package_all_files_verified(server, tmp_path: Path):
    client = DataverseClient(server.base_url)
    refs = list_packages(server.base_url, "fileName:*.R", limit=1, client=client)
    manifest = fetch_package(refs[0], tmp_path, client)
    assert manifest.fetch_status == "ok"
    assert len(manifest.files) == 2
    verify_checksums(manifest)
    assert all(e.verified == "ok" for e in manifest.files)
    # round trip through JSON keeps the stable field names
    save_manifest(manifest, tmp_path / "m.json")
    loaded = load_manifest(tmp_path / "m.json")
    assert loaded.to_dict() == manifest.to_dict()
    raw = (tmp_path / "m.json").read_text()
    for field in ("persistent_id", "relative_path", "checksum", "verified", "fetch_status"):
        assert field in raw


def test_fetch_then_local_catalog_identical_file_sets(server, tmp_path: Path):
    client = DataverseClient(server.base_url)
    refs = list_packages(server.base_url, "fileName:*.R", limit=2, client=client)
    manifest = fetch_package(refs[1], tmp_path, client)
    local = load_local_package(manifest.root)
    fetched_set = {(e.relative_path, e.size) for e in manifest.files}
    local_set = {(e.relative_path, e.size) for e in local.files}
    assert fetched_set == local_set


def test_restricted_file_fails_package_with_authorization(tmp_path: Path):
    datasets = [
        MockDataset(
            persistent_id="doi:10.5072/FK2/RESTR1",
            files=[
                MockFile("open.R", b"x <- 1\n"),
                MockFile("secret.csv", b"classified", restricted=True),
            ],
        )
    ]
    with MockDataverse(datasets) as mock:
        client = DataverseClient(mock.base_url)
        refs = list_packages(mock.base_url, "*", limit=5, client=client)
        assert len(refs) == 1  # restricted datasets still listed
        manifest = fetch_package(refs[0], tmp_path, client)
    assert manifest.fetch_status == "failed"
    assert manifest.failure_reason == "authorization"


def test_restricted_listing_fails_package(tmp_path: Path):
    datasets = [
        MockDataset(
            persistent_id="doi:10.5072/FK2/RESTR2",
            restricted=True,
            files=[MockFile("a.R", b"x\n")],
        )
    ]
    with MockDataverse(datasets) as mock:
        client = DataverseClient(mock.base_url)
        manifest = fetch_package(
            list_packages(mock.base_url, "*", limit=1, client=client)[0], tmp_path, client
        )
    assert manifest.fetch_status == "failed"
    assert manifest.failure_reason == "authorization"
    assert manifest.files == []


def test_failed_download_marks_partial(tmp_path: Path):
    datasets = [
        MockDataset(
            persistent_id="doi:10.5072/FK2/FLAKY",
            files=[
                MockFile("good.R", b"x <- 1\n"),
                MockFile("bad.bin", b"....", fail_download=True),
            ],
        )
    ]
    with MockDataverse(datasets) as mock:
        client = DataverseClient(mock.base_url, retries=2, backoff=0.01)
        manifest = fetch_package(
            list_packages(mock.base_url, "*", limit=1, client=client)[0], tmp_path, client
        )
    assert manifest.fetch_status == "partial"
    errors = [e for e in manifest.files if e.error]
    assert len(errors) == 1 and errors[0].relative_path == "bad.bin"


def test_zero_file_dataset_ok(tmp_path: Path):
    datasets = [MockDataset(persistent_id="doi:10.5072/FK2/EMPTY")]
    with MockDataverse(datasets) as mock:
        client = DataverseClient(mock.base_url)
        manifest = fetch_package(
            list_packages(mock.base_url, "*", limit=1, client=client)[0], tmp_path, client
        )
    assert manifest.fetch_status == "ok"
    assert manifest.files == []


def test_name_collision_suffixed_and_recorded(tmp_path: Path):
    datasets = [
        MockDataset(
            persistent_id="doi:10.5072/FK2/COLLIDE",
            files=[
                MockFile("run.R", b"x <- 1\n", directory_label="code"),
                MockFile("run.R", b"y <- 2\n", directory_label="replication"),
            ],
        )
    ]
    with MockDataverse(datasets) as mock:
        client = DataverseClient(mock.base_url)
        manifest = fetch_package(
            list_packages(mock.base_url, "*", limit=1, client=client)[0], tmp_path, client
        )
    names = sorted(e.relative_path for e in manifest.files)
    assert names == ["run.R", "run_1.R"]
    renamed = next(e for e in manifest.files if e.relative_path == "run_1.R")
    assert renamed.original_label == "replication/run.R"
    verify_checksums(manifest)
    assert all(e.verified == "ok" for e in manifest.files)


def test_fetch_many_concurrent_produces_all_manifests(server, tmp_path: Path):
    refs = list_packages(server.base_url, "fileName:*.R", limit=6)
    manifests = fetch_many(refs, tmp_path, lambda: DataverseClient(server.base_url), jobs=3)
    assert len(manifests) == 6
    assert {m.ref.persistent_id for m in manifests} == {r.persistent_id for r in refs}
    assert all(m.fetch_status == "ok" for m in manifests)


def test_corrupt_byte_yields_checksum_mismatch(tmp_path: Path):
    datasets = [
        MockDataset(
            persistent_id="doi:10.5072/FK2/CKSUM",
            files=[MockFile("a.R", b"x <- 1\n", corrupt_checksum=True)],
        )
    ]
    with MockDataverse(datasets) as mock:
        client = DataverseClient(mock.base_url)
        manifest = fetch_package(
            list_packages(mock.base_url, "*", limit=1, client=client)[0], tmp_path, client
        )
    verify_checksums(manifest)
    assert manifest.files[0].verified == "mismatch"


def test_verify_checksums_idempotent(tmp_path: Path):
    datasets = [
        MockDataset(persistent_id="doi:10.5072/FK2/IDEM", files=[MockFile("a.R", b"x <- 1\n")])
    ]
    with MockDataverse(datasets) as mock:
        client = DataverseClient(mock.base_url)
        manifest = fetch_package(
            list_packages(mock.base_url, "*", limit=1, client=client)[0], tmp_path, client
        )
    once = verify_checksums(manifest).to_dict()
    twice = verify_checksums(manifest).to_dict()
    assert once == twice


def test_verify_unreadable_file_is_mismatch_with_reason(tmp_path: Path):
    datasets = [
        MockDataset(persistent_id="doi:10.5072/FK2/GONE", files=[MockFile("a.R", b"x <- 1\n")])
    ]
    with MockDataverse(datasets) as mock:
        client = DataverseClient(mock.base_url)
        manifest = fetch_package(
            list_packages(mock.base_url, "*", limit=1, client=client)[0], tmp_path, client
        )
    os.unlink(Path(manifest.root) / "a.R")
    verify_checksums(manifest)
    assert manifest.files[0].verified == "mismatch"
    assert "unreadable" in manifest.files[0].error


# --- local packages -------------------------------------------------------------


def test_local_package_three_entries(tmp_path: Path):
    manifest = make_package(
        tmp_path, "loc", {"a.R": "x\n", "b.R": "y\n", "README": "hi\n"}
    )
    assert len(manifest.files) == 3
    assert all(e.verified == "unchecked" for e in manifest.files)
    assert all(e.checksum is None for e in manifest.files)


def test_local_empty_directory(tmp_path: Path):
    (tmp_path / "empty").mkdir()
    manifest = load_local_package(tmp_path / "empty")
    assert manifest.files == []
    assert manifest.fetch_status == "ok"


def test_local_nested_structure_matches_walk(tmp_path: Path):
    manifest = make_package(
        tmp_path,
        "nested",
        {"top.R": "1\n", "code/deep.R": "2\n", "code/data/d.csv": "3\n"},
    )
    expected = set()
    for dirpath, _, filenames in os.walk(tmp_path / "nested"):
        for filename in filenames:
            full = Path(dirpath) / filename
            expected.add(str(full.relative_to(tmp_path / "nested")))
    assert {e.relative_path for e in manifest.files} == expected


def test_local_missing_directory_fatal(tmp_path: Path):
    with pytest.raises(IngestError):
        load_local_package(tmp_path / "missing")


def test_package_slug():
    assert package_slug("doi:10.5072/FK2/ABC") == "10.5072_FK2_ABC"
    assert package_slug("local:my pkg") == "local_my_pkg"


def test_malformed_api_response_is_fatal_parse_error():
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
    import threading

    from reprorun.ingest import ApiFormatError

    class BadHandler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_GET(self):  # noqa: N802
            body = b"<html>surprise, not json</html>"
            self.send_response(200)
            self.send_header("Content-Type", "text/html")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    server = ThreadingHTTPServer(("127.0.0.1", 0), BadHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        host, port = server.server_address
        with pytest.raises(ApiFormatError) as excinfo:
            list_packages(f"http://{host}:{port}", "*", limit=3)
        assert "surprise" in str(excinfo.value)  # offending payload excerpt included
    finally:
        server.shutdown()
        server.server_close()


def test_api_token_from_environment(monkeypatch):
    monkeypatch.setenv("DATAVERSE_API_TOKEN", "sekrit")
    client = DataverseClient("http://example.org")
    assert client._headers() == {"X-Dataverse-key": "sekrit"}
    monkeypatch.delenv("DATAVERSE_API_TOKEN")
    assert DataverseClient("http://example.org")._headers() == {}
