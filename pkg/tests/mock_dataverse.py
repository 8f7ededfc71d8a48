"""In-process mock of the Dataverse API endpoints the client uses.

Serves ``/api/search``, the dataset file listing, and
``/api/access/datafile/:id`` from an in-memory fixture corpus, with
switches for restricted access (403), corrupt reported checksums, and
flaky downloads.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse


@dataclass
class MockFile:
    name: str
    content: bytes
    directory_label: str | None = None
    restricted: bool = False
    corrupt_checksum: bool = False
    fail_download: bool = False
    file_id: int = 0

    def reported_md5(self) -> str:
        digest = hashlib.md5(self.content).hexdigest()
        if self.corrupt_checksum:
            digest = ("0" if digest[0] != "0" else "1") + digest[1:]
        return digest


@dataclass
class MockDataset:
    persistent_id: str
    title: str = ""
    published_at: str = "2019-01-01T00:00:00Z"
    subjects: list[str] = field(default_factory=list)
    dataverse_name: str = "Root"
    files: list[MockFile] = field(default_factory=list)
    restricted: bool = False

    def has_r_code(self) -> bool:
        return any(f.name.endswith((".R", ".r")) for f in self.files)


class MockDataverse:
    """Threaded HTTP server over a fixture corpus; use as a context manager."""

    def __init__(self, datasets: list[MockDataset]):
        self.datasets = sorted(datasets, key=lambda d: d.persistent_id)
        self.files_by_id: dict[int, MockFile] = {}
        next_id = 1
        for dataset in self.datasets:
            for mock_file in dataset.files:
                mock_file.file_id = next_id
                self.files_by_id[next_id] = mock_file
                next_id += 1
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._make_handler())
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockDataverse":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()

    def _make_handler(self):
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def _send_json(self, payload: dict, status: int = 200) -> None:
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def _send_error_status(self, status: int, message: str) -> None:
                self._send_json({"status": "ERROR", "message": message}, status)

            def do_GET(self):  # noqa: N802 (http.server API)
                parsed = urlparse(self.path)
                query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
                if parsed.path == "/api/search":
                    return self._search(query)
                if parsed.path == "/api/datasets/:persistentId/versions/:latest/files":
                    return self._dataset_files(query)
                if parsed.path.startswith("/api/access/datafile/"):
                    return self._datafile(int(parsed.path.rsplit("/", 1)[1]))
                self._send_error_status(404, "not found")

            def _search(self, query: dict) -> None:
                q = query.get("q", "*")
                wants_r = ".R" in q or "x-r-syntax" in q
                matches = [d for d in mock.datasets if d.has_r_code()] if wants_r else mock.datasets
                start = int(query.get("start", 0))
                per_page = int(query.get("per_page", 10))
                page = matches[start : start + per_page]
                items = [
                    {
                        "name": d.title,
                        "type": "dataset",
                        "global_id": d.persistent_id,
                        "published_at": d.published_at,
                        "subjects": d.subjects,
                        "name_of_dataverse": d.dataverse_name,
                        "publisher": "Mock Dataverse",
                        "fileCount": len(d.files),
                    }
                    for d in page
                ]
                self._send_json(
                    {
                        "status": "OK",
                        "data": {
                            "total_count": len(matches),
                            "start": start,
                            "items": items,
                            "count_in_response": len(items),
                        },
                    }
                )

            def _dataset_files(self, query: dict) -> None:
                pid = query.get("persistentId", "")
                dataset = next((d for d in mock.datasets if d.persistent_id == pid), None)
                if dataset is None:
                    return self._send_error_status(404, f"unknown dataset {pid}")
                if dataset.restricted:
                    return self._send_error_status(403, "restricted dataset")
                items = []
                for mock_file in dataset.files:
                    item = {
                        "label": mock_file.name,
                        "dataFile": {
                            "id": mock_file.file_id,
                            "filename": mock_file.name,
                            "filesize": len(mock_file.content),
                            "checksum": {"type": "MD5", "value": mock_file.reported_md5()},
                        },
                    }
                    if mock_file.directory_label:
                        item["directoryLabel"] = mock_file.directory_label
                    items.append(item)
                self._send_json({"status": "OK", "data": items})

            def _datafile(self, file_id: int) -> None:
                mock_file = mock.files_by_id.get(file_id)
                if mock_file is None:
                    return self._send_error_status(404, f"unknown file {file_id}")
                if mock_file.restricted:
                    return self._send_error_status(403, "restricted file")
                if mock_file.fail_download:
                    return self._send_error_status(500, "storage error")
                self.send_response(200)
                self.send_header("Content-Type", "application/octet-stream")
                self.send_header("Content-Length", str(len(mock_file.content)))
                self.end_headers()
                self.wfile.write(mock_file.content)

        return Handler
