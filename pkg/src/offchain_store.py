"""
Content-addressed payload store kept beside the ledger.
Layout: <root>/<channel>/<hex checksum>. The locator is the checksum hex.
"""
import logging
import os
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

from .crypto import Digest, digest
from .errors import ContractError

logger = logging.getLogger(__name__)


class OffChainStore:
    """Concurrent reads; writes and deletes are serialized per checksum"""

    def __init__(self, root: Path):
        self.root = Path(root)
        # checksum -> (lock, holders); an entry lives only while someone holds or waits on it
        self._locks: Dict[str, Tuple[threading.Lock, int]] = {}
        self._guard = threading.Lock()

    @contextmanager
    def _locked(self, checksum_hex: str) -> Iterator[None]:
        with self._guard:
            lock, holders = self._locks.get(checksum_hex, (None, 0))
            lock = lock or threading.Lock()
            self._locks[checksum_hex] = (lock, holders + 1)
        try:
            with lock:
                yield
        finally:
            with self._guard:
                lock, holders = self._locks[checksum_hex]
                if holders == 1:
                    del self._locks[checksum_hex]
                else:
                    self._locks[checksum_hex] = (lock, holders - 1)

    def path_for(self, channel_id: str, locator: str) -> Path:
        if not locator or any(c not in "0123456789abcdef" for c in locator):
            raise ContractError("CONTRACT_ERROR", f"malformed off-chain locator {locator!r}")
        return self.root / channel_id / locator

    def put(self, channel_id: str, payload: bytes) -> str:
        """Store payload under its checksum; identical payloads share one file"""
        locator = digest(payload).hex
        path = self.path_for(channel_id, locator)
        with self._locked(locator):
            if path.exists() and path.read_bytes() == payload:
                return locator
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(payload)
            os.replace(tmp, path)
        logger.debug("Stored %d octets off-chain as %s/%s", len(payload), channel_id, locator[:16])
        return locator

    def exists(self, channel_id: str, locator: str) -> bool:
        return self.path_for(channel_id, locator).exists()

    def get(self, channel_id: str, locator: str, checksum: Optional[Digest] = None) -> bytes:
        """Read the payload and re-verify it against the on-chain checksum"""
        path = self.path_for(channel_id, locator)
        try:
            payload = path.read_bytes()
        except FileNotFoundError:
            raise ContractError("NOT_FOUND", f"off-chain payload {locator[:16]} is missing") from None
        expected = checksum.hex if checksum is not None else locator
        if digest(payload).hex != expected:
            logger.warning("Off-chain payload %s/%s fails its checksum", channel_id, locator[:16])
            raise ContractError("INTEGRITY_MISMATCH", f"off-chain payload {locator[:16]} does not match its checksum")
        return payload

    def destroy(self, channel_id: str, locator: str) -> bool:
        """Overwrite the file with zeros, flush, then unlink it"""
        path = self.path_for(channel_id, locator)
        with self._locked(locator):
            if not path.exists():
                return False
            size = path.stat().st_size
            with open(path, "r+b") as handle:
                handle.write(b"\x00" * size)
                handle.flush()
                os.fsync(handle.fileno())
            path.unlink()
        logger.info("Destroyed off-chain payload %s/%s", channel_id, locator[:16])
        return True

    def iter_files(self, channel_id: Optional[str] = None) -> Iterator[Path]:
        base = self.root / channel_id if channel_id else self.root
        if not base.exists():
            return iter(())
        return (p for p in sorted(base.rglob("*")) if p.is_file())

    def footprint(self, channel_id: str) -> int:
        """Octets currently held off-chain for a channel"""
        return sum(p.stat().st_size for p in self.iter_files(channel_id))
