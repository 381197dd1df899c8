import logging
import queue
import threading
from typing import Any, Callable, Optional


class BatchPrefetcher:
    """Prepares batch k+1 on a worker thread while step k runs.

    ``producer(iteration)`` must be a pure function of the iteration, so the
    sequence handed out is the same with or without the worker.
    """

    def __init__(self, producer: Callable[[int], Any], start: int, stop: int, depth: int = 1):

        self.producer = producer
        self.first = start
        self.last = stop
        self.logger = logging.getLogger(__name__)

        self.queue: queue.Queue = queue.Queue(maxsize=max(1, depth))
        self.running = False
        self.worker_thread: Optional[threading.Thread] = None

    def start(self):

        if self.running:
            self.logger.warning("Batch prefetcher already running")
            return

        self.running = True
        self.worker_thread = threading.Thread(target=self._produce, daemon=True)
        self.worker_thread.start()
        self.logger.debug(f"Batch prefetcher started for iterations {self.first}..{self.last - 1}")

    def stop(self):

        if not self.running:
            return

        self.running = False

        while True:
            try:
                self.queue.get_nowait()
            except queue.Empty:
                break

        if self.worker_thread and self.worker_thread.is_alive():
            self.worker_thread.join(timeout=5)

        self.logger.debug("Batch prefetcher stopped")

    def _produce(self):

        for iteration in range(self.first, self.last):
            try:
                item = (iteration, self.producer(iteration), None)
            except Exception as e:
                item = (iteration, None, e)

            while self.running:
                try:
                    self.queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue

            if not self.running or item[2] is not None:
                return

    def get(self, iteration: int) -> Any:

        if not self.running:
            return self.producer(iteration)

        produced, batch, error = self.queue.get()

        if error is not None:
            raise error
        if produced != iteration:
            raise RuntimeError(f"prefetcher out of step: expected iteration {iteration}, got {produced}")

        return batch

    def __enter__(self) -> 'BatchPrefetcher':

        self.start()
        return self

    def __exit__(self, exc_type, exc, tb):

        self.stop()
