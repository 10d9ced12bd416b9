"""
Solo ordering service: one per channel, the single serialization point.
A block is cut when batch_size transactions are queued or batch_timeout
seconds have passed since the first of them was queued.
"""
import logging
import threading
import time
from concurrent.futures import Future
from datetime import datetime
from typing import Callable, List, Optional, Tuple

from .canonical import utc_now
from .ledger import Channel
from .models.transaction import CommitStatus, EndorsedTransaction

logger = logging.getLogger(__name__)


class SoloOrderer:
    """
    Runs either with a background cutter thread (start/stop) or in manual
    mode, where full batches are cut on broadcast and flush() cuts the rest.
    """

    def __init__(self, channel: Channel, batch_size: int = 10, batch_timeout: float = 0.05,
                 clock: Optional[Callable[[], datetime]] = None):
        if batch_size < 1 or batch_timeout <= 0:
            raise ValueError("batch_size must be >= 1 and batch_timeout positive")
        self.channel = channel
        self.batch_size = batch_size
        self.batch_timeout = batch_timeout
        self.clock = clock or utc_now
        self._queue: List[Tuple[EndorsedTransaction, Future, float]] = []
        self._first_queued_at: Optional[float] = None
        self._cond = threading.Condition()
        self._cut_lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None
        self._running = False
        self.blocks_cut = 0

    @property
    def running(self) -> bool:
        return self._running

    @property
    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    def broadcast(self, tx: EndorsedTransaction) -> 'Future[CommitStatus]':
        """Queue a transaction in arrival order; the future resolves on commit"""
        future: Future = Future()
        with self._cond:
            queued_at = time.monotonic()
            if not self._queue:
                self._first_queued_at = queued_at
            self._queue.append((tx, future, queued_at))
            full = len(self._queue) >= self.batch_size
            self._cond.notify_all()
        if full and not self._running:
            self._cut(force=False)
        return future

    def _take_batch(self, force: bool) -> List[Tuple[EndorsedTransaction, Future, float]]:
        with self._cond:
            if not self._queue or (not force and len(self._queue) < self.batch_size):
                return []
            batch, self._queue = self._queue[:self.batch_size], self._queue[self.batch_size:]
            # leftovers keep the clock of their oldest entry
            self._first_queued_at = self._queue[0][2] if self._queue else None
            return batch

    def _cut(self, force: bool) -> int:
        with self._cut_lock:
            batch = self._take_batch(force)
            if not batch:
                return 0
            try:
                block = self.channel.next_block([tx for tx, _, _ in batch], self.clock())
                codes = self.channel.validate_and_commit(block)
            except Exception as e:
                logger.error("Block commit on %s failed: %s", self.channel.channel_id, e)
                for _, future, _ in batch:
                    future.set_exception(e)
                return 0
            self.blocks_cut += 1
            for (tx, future, _), code in zip(batch, codes):
                future.set_result(CommitStatus(tx.tx_id, code, block.height, block.timestamp))
            return len(batch)

    def flush(self) -> int:
        """Cut blocks until the queue is empty; returns transactions ordered"""
        ordered = 0
        while True:
            count = self._cut(force=True)
            if not count:
                return ordered
            ordered += count

    def _run(self) -> None:
        while True:
            with self._cond:
                while self._running and not self._queue:
                    self._cond.wait()
                if not self._running:
                    return
                while self._running and self._queue and len(self._queue) < self.batch_size:
                    remaining = self.batch_timeout - (time.monotonic() - self._first_queued_at)
                    if remaining <= 0:
                        break
                    self._cond.wait(remaining)
            self._cut(force=True)

    def start(self) -> None:
        if self._running:
            return
        self._running = True
        self._thread = threading.Thread(target=self._run, name=f"orderer-{self.channel.channel_id}", daemon=True)
        self._thread.start()
        logger.debug("Orderer for %s started (batch %d / %.3fs)", self.channel.channel_id,
                     self.batch_size, self.batch_timeout)

    def stop(self) -> None:
        with self._cond:
            self._running = False
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        self.flush()
