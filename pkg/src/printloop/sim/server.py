"""Serve a :class:`VirtualPrinter` over HTTP (Moonraker-compatible subset)."""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, urlsplit

from .printer import VirtualPrinter

log = logging.getLogger(__name__)


def make_handler(printer: VirtualPrinter) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        def _dispatch(self, method: str) -> None:
            faults = printer.faults
            if faults.unreachable or faults.transient_failures > 0:
                # hang up without a response; clients see a dropped connection
                if not faults.unreachable:
                    faults.transient_failures -= 1
                self.close_connection = True
                return
            url = urlsplit(self.path)
            params = dict(parse_qsl(url.query, keep_blank_values=True))
            body = {}
            length = int(self.headers.get("Content-Length") or 0)
            if length:
                try:
                    body = json.loads(self.rfile.read(length))
                except ValueError:
                    self.send_error(400, "invalid JSON body")
                    return
            resp = printer.handle(method, url.path, params, body)
            self.send_response(resp.status_code)
            self.send_header("Content-Type", resp.content_type)
            self.send_header("Content-Length", str(len(resp.content)))
            self.end_headers()
            self.wfile.write(resp.content)

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

        def log_message(self, fmt, *args):
            log.debug("sim-http: " + fmt, *args)

    return Handler


class SimServer:
    """Background HTTP server; use as a context manager."""

    def __init__(self, printer: VirtualPrinter, host: str = "127.0.0.1", port: int = 0):
        self.printer = printer
        self.httpd = ThreadingHTTPServer((host, port), make_handler(printer))
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "SimServer":
        self.thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)

    def __enter__(self) -> "SimServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
