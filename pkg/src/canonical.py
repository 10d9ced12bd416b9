import base64
import binascii
import json
from datetime import datetime
from typing import Any, Optional

import pytz
from dateutil import parser as date_parser

UTC = pytz.utc


def canonical_json(obj: Any) -> bytes:
    """
    Deterministic encoding used for hashing and signing:
    key-sorted, whitespace-free UTF-8 JSON. Octets must already be base64 text.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def pretty_json(obj: Any) -> str:
    """Key-sorted indented JSON for files meant to be read by people"""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False)


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode(text: str) -> bytes:
    """Strict base64 decoding; rejects non-alphabet characters"""
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError, AttributeError) as e:
        raise ValueError(f"Invalid base64 field: {e}") from e


def utc_now() -> datetime:
    return datetime.now(UTC)


def ensure_utc(value: datetime) -> datetime:
    """Attach or convert to UTC; naive datetimes are taken as UTC"""
    if value.tzinfo is None:
        return UTC.localize(value)
    return value.astimezone(UTC)


def format_utc(value: datetime) -> str:
    """Fixed-width ISO-8601 form with microseconds and a Z suffix"""
    return ensure_utc(value).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_utc(text: str) -> datetime:
    try:
        return ensure_utc(date_parser.isoparse(text))
    except (ValueError, TypeError) as e:
        raise ValueError(f"Unable to parse timestamp: {text}. Error: {e}") from e


def optional_utc(text: Optional[str]) -> Optional[datetime]:
    return parse_utc(text) if text else None
