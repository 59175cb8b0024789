"""Local mock tool service for desk-scale end-to-end runs.

Four deterministic endpoints mirroring a movie-database dependency chain
(person search -> movie credits -> movie images) plus an endpoint that
always answers with an error-shaped body. Payloads are fixed so runs are
reproducible without third-party keys.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

PEOPLE = {
    "christopher nolan": {"id": 525, "name": "Christopher Nolan", "known_for_department": "Directing"},
    "emma thomas": {"id": 556, "name": "Emma Thomas", "known_for_department": "Production"},
    "greta gerwig": {"id": 45400, "name": "Greta Gerwig", "known_for_department": "Directing"},
}

CREDITS = {
    525: {
        "cast": [],
        "crew": [
            {"id": 27205, "title": "Inception", "job": "Director", "poster_path": "/inception.jpg"},
            {"id": 155, "title": "The Dark Knight", "job": "Director", "poster_path": "/dark_knight.jpg"},
            {"id": 49026, "title": "The Dark Knight Rises", "job": "Writer", "poster_path": "/dkr.jpg"},
        ],
    },
    556: {
        "cast": [],
        "crew": [
            {"id": 27205, "title": "Inception", "job": "Producer", "poster_path": "/inception.jpg"},
        ],
    },
    45400: {
        "cast": [],
        "crew": [
            {"id": 346698, "title": "Barbie", "job": "Director", "poster_path": "/barbie.jpg"},
        ],
    },
}

IMAGES = {
    27205: {"id": 27205, "posters": [{"file_path": "/inception_a.jpg"}, {"file_path": "/inception_b.jpg"}]},
    155: {"id": 155, "posters": [{"file_path": "/dark_knight_a.jpg"}]},
    346698: {"id": 346698, "posters": [{"file_path": "/barbie_a.jpg"}]},
}

ERROR_BODY = {
    "status_code": 7,
    "status_message": "Invalid API key: you must be granted a valid key.",
    "success": False,
}

_PERSON_RE = re.compile(r"^/person/(\d+)/movie_credits$")
_IMAGES_RE = re.compile(r"^/movie/(\d+)/images$")


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, fmt: str, *args: object) -> None:  # silence request noise
        pass

    def _reply(self, status: int, body: dict) -> None:
        payload = json.dumps(body, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self) -> None:  # noqa: N802 - http.server naming
        parsed = urlparse(self.path)
        if parsed.path == "/search/person":
            query = (parse_qs(parsed.query).get("query") or [""])[0].strip().lower()
            hits = [p for key, p in PEOPLE.items() if query and query in key]
            self._reply(200, {"page": 1, "results": hits, "total_results": len(hits)})
            return
        match = _PERSON_RE.match(parsed.path)
        if match:
            person_id = int(match.group(1))
            self._reply(200, CREDITS.get(person_id, {"cast": [], "crew": []}))
            return
        match = _IMAGES_RE.match(parsed.path)
        if match:
            movie_id = int(match.group(1))
            self._reply(200, IMAGES.get(movie_id, {"id": movie_id, "posters": []}))
            return
        if parsed.path == "/error/always":
            self._reply(200, ERROR_BODY)
            return
        self._reply(404, {"error": "not found", "path": parsed.path})


class MockToolService:
    """Threaded HTTP fixture bound to localhost; port 0 picks a free port."""

    def __init__(self, port: int = 0) -> None:
        self._server = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "MockToolService":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def __enter__(self) -> "MockToolService":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()
