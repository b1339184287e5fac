"""
Socket-mode bus over WebSockets.

Each publishing process runs one server; subscribers connect straight to
the publishers they need at ws://host:port/bus/<topic>. Publishers keep
no delivery state: a frame goes to whoever is connected at that moment.
All socket I/O runs on a dedicated thread with its own event loop, so
publish() can be called from any thread.
"""

import asyncio
import logging
import threading
import time

import websockets

from cellfence.config import BUS_HOST, BUS_MAX_RECONNECT_INTERVAL, BUS_RECONNECT_INTERVAL

logger = logging.getLogger("MessageBus")

PATH_PREFIX = "/bus/"


def topic_url(host, port, topic):
    return f"ws://{host}:{port}{PATH_PREFIX}{topic}"


class SocketPublisher:
    """
    WebSocket server that broadcasts frames per topic.

    Args:
        host (str): Interface to bind.
        port (int): TCP port; each publishing component uses its own.
    """

    def __init__(self, host=BUS_HOST, port=8765, name="publisher"):
        self.host = host
        self.port = port
        self.name = name
        self.published = 0
        self.dropped = 0
        self._clients = {}
        self._loop = None
        self._thread = None
        self._stop_event = None
        self._ready = threading.Event()
        self._failed = None

    def start(self, timeout=5.0):
        """Start the server thread; returns True once the server is listening."""
        if self._thread and self._thread.is_alive():
            logger.warning(f"{self.name} already running")
            return True
        self._thread = threading.Thread(target=self._run, name=f"{self.name}-bus", daemon=True)
        self._thread.start()
        if not self._ready.wait(timeout) or self._failed:
            logger.error(f"{self.name} could not listen on {self.host}:{self.port}: {self._failed}")
            return False
        logger.info(f"{self.name} publishing on ws://{self.host}:{self.port}")
        return True

    def _run(self):
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        try:
            self._loop.run_until_complete(self._serve())
        except Exception as e:
            self._failed = e
            self._ready.set()
        finally:
            self._loop.close()

    async def _serve(self):
        self._stop_event = asyncio.Event()
        async with websockets.serve(self._handler, self.host, self.port, compression=None, max_size=None):
            self._ready.set()
            await self._stop_event.wait()

    async def _handler(self, websocket, path=None):
        path = path or getattr(websocket, "path", None) or websocket.request.path
        if not path.startswith(PATH_PREFIX):
            logger.warning(f"Rejecting subscriber with path {path}")
            await websocket.close(code=1008)
            return
        topic = path[len(PATH_PREFIX):]
        clients = self._clients.setdefault(topic, set())
        clients.add(websocket)
        logger.debug(f"Subscriber joined '{topic}' on {self.name} ({len(clients)} connected)")
        try:
            await websocket.wait_closed()
        finally:
            clients.discard(websocket)
            logger.debug(f"Subscriber left '{topic}' on {self.name}")

    def _broadcast(self, topic, payload):
        clients = self._clients.get(topic)
        if clients:
            websockets.broadcast(clients, payload)
        self.published += 1

    def publish(self, topic, payload):
        """Fire and forget; frames published while the server is down are counted as dropped."""
        loop = self._loop
        if loop is None or loop.is_closed() or not self._ready.is_set():
            self.dropped += 1
            return
        try:
            loop.call_soon_threadsafe(self._broadcast, topic, bytes(payload))
        except RuntimeError:
            self.dropped += 1

    def subscriber_count(self, topic):
        return len(self._clients.get(topic, ()))

    def wait_for_subscribers(self, topic, count, timeout=5.0):
        deadline = time.monotonic() + timeout
        while self.subscriber_count(topic) < count:
            if time.monotonic() > deadline:
                return False
            time.sleep(0.01)
        return True

    def stop(self):
        if self._loop is not None and self._stop_event is not None and not self._loop.is_closed():
            try:
                self._loop.call_soon_threadsafe(self._stop_event.set)
            except RuntimeError:
                pass
        if self._thread:
            self._thread.join(timeout=2.0)
            self._thread = None
        logger.info(f"{self.name} stopped (published={self.published}, dropped={self.dropped})")


class SocketSubscriber:
    """
    Connects to one or more (host, port, topic) endpoints and hands every
    frame to callback(topic, payload) on the subscriber thread.
    Lost connections are retried with exponential backoff.
    """

    def __init__(self, endpoints, callback, name="subscriber",
                 reconnect_interval=BUS_RECONNECT_INTERVAL, max_reconnect_interval=BUS_MAX_RECONNECT_INTERVAL):
        self.endpoints = list(endpoints)
        self.callback = callback
        self.name = name
        self.reconnect_interval = reconnect_interval
        self.max_reconnect_interval = max_reconnect_interval
        self.received = 0
        self.callback_errors = 0
        self.running = False
        self._connected = set()
        self._loop = None
        self._task = None
        self._thread = None

    def start(self):
        if self._thread and self._thread.is_alive():
            logger.warning(f"{self.name} already running")
            return
        self.running = True
        self._thread = threading.Thread(target=self._run, name=f"{self.name}-bus", daemon=True)
        self._thread.start()

    def _run(self):
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        self._task = self._loop.create_task(self._listen_all())
        try:
            self._loop.run_until_complete(self._task)
        except asyncio.CancelledError:
            pass
        except Exception as e:
            logger.error(f"{self.name} stopped with error: {str(e)}")
        finally:
            self._loop.close()

    async def _listen_all(self):
        await asyncio.gather(*(self._listen(h, p, t) for h, p, t in self.endpoints))

    async def _listen(self, host, port, topic):
        url = topic_url(host, port, topic)
        interval = self.reconnect_interval
        while self.running:
            try:
                async with websockets.connect(url, compression=None, max_size=None) as websocket:
                    self._connected.add(url)
                    interval = self.reconnect_interval
                    logger.debug(f"{self.name} connected to {url}")
                    async for message in websocket:
                        self.received += 1
                        try:
                            self.callback(topic, message)
                        except Exception as e:
                            self.callback_errors += 1
                            logger.error(f"{self.name} callback failed on '{topic}': {str(e)}")
            except asyncio.CancelledError:
                raise
            except Exception as e:
                logger.debug(f"{self.name} connection to {url} failed: {str(e)}")
            finally:
                self._connected.discard(url)

            if not self.running:
                break
            await asyncio.sleep(interval)
            interval = min(interval * 1.5, self.max_reconnect_interval)

    @property
    def connected(self):
        return len(self._connected) == len(self.endpoints)

    def wait_connected(self, timeout=5.0):
        deadline = time.monotonic() + timeout
        while not self.connected:
            if time.monotonic() > deadline:
                return False
            time.sleep(0.01)
        return True

    def stop(self):
        self.running = False
        if self._loop is not None and self._task is not None and not self._loop.is_closed():
            try:
                self._loop.call_soon_threadsafe(self._task.cancel)
            except RuntimeError:
                pass
        if self._thread:
            self._thread.join(timeout=2.0)
            self._thread = None
        logger.info(f"{self.name} stopped (received={self.received})")
