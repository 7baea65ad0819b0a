import logging
import queue
import socketserver
import threading
from typing import Callable, Optional, Tuple

from softconform import signals
from softconform.events import StreamEvent
from softconform.streams import MalformedLineError, parse_wire_line
from softconform.utils import SoftConformError

logger = logging.getLogger(__name__)

# markers travelling through the hand-off next to WireEvents
_CLOSED = object()
_STOP = object()


class BindError(SoftConformError):
    pass


class LineRequestHandler(socketserver.StreamRequestHandler):
    """Read wire lines from one producer into the listener hand-off."""

    def handle(self):
        listener = self.server.listener
        peer = "{}:{}".format(*self.client_address[:2])
        logger.info("Producer %s connected", peer)
        limit = listener.max_line_bytes
        try:
            while True:
                # one byte over the limit tells a full line from a cut one
                raw = self.rfile.readline(limit + 1)
                if not raw:
                    break
                if len(raw) > limit and not raw.endswith(b"\n"):
                    self._skip_rest_of_line(limit)
                    listener.malformed(
                        raw[:40].decode("utf-8", "replace") + "...",
                        f"longer than {limit} bytes",
                        peer,
                    )
                    continue
                try:
                    wire = parse_wire_line(raw.decode("utf-8"))
                except UnicodeDecodeError:
                    listener.malformed(repr(raw), "not UTF-8", peer)
                    continue
                except MalformedLineError as e:
                    listener.malformed(e.line, e.reason, peer)
                    continue
                if wire is not None:
                    # blocks while the consumer lags behind
                    listener.handoff.put(wire)
        except OSError as e:
            logger.warning("Connection with %s broken: %s", peer, e)

    def _skip_rest_of_line(self, limit):
        while True:
            chunk = self.rfile.readline(limit)
            if not chunk or chunk.endswith(b"\n"):
                return

    def finish(self):
        try:
            super().finish()
        finally:
            self.server.listener.handoff.put(_CLOSED)
            logger.info("Producer %s disconnected", "{}:{}".format(*self.client_address[:2]))


class EventStreamServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    block_on_close = False

    def __init__(self, address, listener):
        self.listener = listener
        super().__init__(address, LineRequestHandler)


class StreamListener:
    """Merge the lines of every producer connection into one ordered stream.

    Each connection is read by its own thread; lines meet in a bounded
    hand-off queue, and the consumer calling ``serve`` numbers them in the
    order it takes them out.
    """

    def __init__(
        self,
        address: Tuple[str, int],
        handoff_size: int = 10000,
        max_line_bytes: int = 65536,
    ):
        self.requested_address = address
        self.max_line_bytes = max_line_bytes
        self.handoff: queue.Queue = queue.Queue(maxsize=handoff_size)
        self.malformed_lines = 0
        self.events = 0
        self._lock = threading.Lock()
        self._server: Optional[EventStreamServer] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> Tuple[str, int]:
        """The bound address, with the real port when 0 was asked for."""
        if self._server is None:
            return self.requested_address
        return self._server.server_address[:2]

    def start(self) -> Tuple[str, int]:
        host, port = self.requested_address
        try:
            self._server = EventStreamServer((host, port), self)
        except OSError as e:
            raise BindError(f"Could not listen on {host}:{port}: {e.strerror}") from None
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="softconform-listener", daemon=True
        )
        self._thread.start()
        logger.info("Listening for events on %s:%s", *self.address)
        return self.address

    def malformed(self, line: str, reason: str, peer: str) -> None:
        with self._lock:
            self.malformed_lines += 1
        logger.warning(
            "Skipping malformed line %r from %s: %s",
            line,
            peer,
            reason,
            extra={"limit_msg": "Skipping more malformed lines"},
        )
        signals.line_malformed.send(self, line=line, reason=reason, peer=peer)

    def serve(
        self,
        on_event: Callable[[StreamEvent], None],
        connections: Optional[int] = None,
    ) -> int:
        """Deliver events to ``on_event`` one at a time.

        Returns once ``connections`` producers have disconnected and their
        lines are delivered, or after ``stop``. Returns the event count.
        """
        if self._server is None:
            self.start()
        closed = 0
        while True:
            item = self.handoff.get()
            if item is _STOP:
                break
            if item is _CLOSED:
                closed += 1
                if connections is not None and closed >= connections:
                    break
                continue
            self.events += 1
            on_event(item.to_stream_event(self.events))
        return self.events

    def stop(self) -> None:
        if self._server is None:
            return
        self._server.shutdown()
        self._server.server_close()
        self._server = None
        try:
            self.handoff.put_nowait(_STOP)
        except queue.Full:
            pass
        logger.info(
            "Listener stopped after %s events and %s malformed lines",
            self.events,
            self.malformed_lines,
        )

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()
