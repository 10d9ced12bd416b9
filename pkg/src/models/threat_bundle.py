import json
import random
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Dict, List, Optional

import stix2
from stix2.exceptions import STIXError

from ..canonical import UTC, canonical_json, format_utc, parse_utc
from ..errors import ExchangeError

BUNDLE_PREFIX = "bundle--"
INDICATOR_PREFIX = "indicator--"


def _check_id(value: Any, prefix: str) -> str:
    if not isinstance(value, str) or not value.startswith(prefix):
        raise ExchangeError("MALFORMED_BUNDLE", f"id {value!r} lacks the {prefix} prefix")
    try:
        uuid.UUID(value[len(prefix):])
    except ValueError:
        raise ExchangeError("MALFORMED_BUNDLE", f"id {value!r} does not end in a UUID") from None
    return value


@dataclass(frozen=True)
class Indicator:
    """STIX 2.1 indicator, the only object type carried in bundles"""
    id: str
    pattern: str
    valid_from: datetime
    labels: List[str] = field(default_factory=list)
    name: Optional[str] = None
    created: Optional[datetime] = None
    modified: Optional[datetime] = None

    def to_dict(self) -> Dict[str, Any]:
        created = self.created or self.valid_from
        data = {
            'type': 'indicator',
            'spec_version': '2.1',
            'id': self.id,
            'created': format_utc(created),
            'modified': format_utc(self.modified or created),
            'pattern': self.pattern,
            'pattern_type': 'stix',
            'valid_from': format_utc(self.valid_from),
            'labels': list(self.labels),
        }
        if self.name is not None:
            data['name'] = self.name
        return data

    def validate(self) -> None:
        """Full STIX check including pattern syntax"""
        try:
            stix2.v21.Indicator(**self.to_dict())
        except (STIXError, ValueError) as e:
            raise ExchangeError("MALFORMED_BUNDLE", f"{self.id}: {e}") from e

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Indicator':
        if not isinstance(data, dict) or data.get('type') != 'indicator':
            kind = data.get('type') if isinstance(data, dict) else type(data).__name__
            raise ExchangeError("MALFORMED_BUNDLE", f"unsupported STIX object type {kind!r}")
        if data.get('pattern_type', 'stix') != 'stix':
            raise ExchangeError("MALFORMED_BUNDLE", f"pattern_type {data.get('pattern_type')!r} is not supported")
        try:
            created = data.get('created')
            modified = data.get('modified')
            labels = data.get('labels', [])
            if not isinstance(labels, list) or not all(isinstance(label, str) for label in labels):
                raise ValueError("labels must be a list of strings")
            if not isinstance(data['pattern'], str) or not data['pattern']:
                raise ValueError("pattern must be a non-empty string")
            return cls(
                id=_check_id(data.get('id'), INDICATOR_PREFIX),
                pattern=data['pattern'],
                valid_from=parse_utc(data['valid_from']),
                labels=labels,
                name=data.get('name'),
                created=parse_utc(created) if created else None,
                modified=parse_utc(modified) if modified else None,
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ExchangeError("MALFORMED_BUNDLE", f"bad indicator: {e}") from e


@dataclass(frozen=True)
class ThreatBundle:
    bundle_id: str
    objects: List[Indicator]
    created_by: str = ""

    def __post_init__(self):
        _check_id(self.bundle_id, BUNDLE_PREFIX)
        if not self.objects:
            raise ExchangeError("MALFORMED_BUNDLE", "bundle carries no objects")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'type': 'bundle',
            'id': self.bundle_id,
            'created_by': self.created_by,
            'objects': [indicator.to_dict() for indicator in self.objects],
        }

    def canonical(self) -> bytes:
        return canonical_json(self.to_dict())

    def validate(self) -> 'ThreatBundle':
        for indicator in self.objects:
            indicator.validate()
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any], strict: bool = True) -> 'ThreatBundle':
        """
        Parse a bundle; strict also runs the stix2 checks (pattern grammar),
        which is what file imports use
        """
        if not isinstance(data, dict) or data.get('type') != 'bundle':
            raise ExchangeError("MALFORMED_BUNDLE", "document is not a STIX bundle")
        objects = data.get('objects')
        if not isinstance(objects, list):
            raise ExchangeError("MALFORMED_BUNDLE", "bundle objects must be a list")
        created_by = data.get('created_by', '')
        if not isinstance(created_by, str):
            raise ExchangeError("MALFORMED_BUNDLE", "created_by must be a string")
        bundle = cls(
            bundle_id=data.get('id'),
            objects=[Indicator.from_dict(obj) for obj in objects],
            created_by=created_by,
        )
        return bundle.validate() if strict else bundle

    @classmethod
    def from_bytes(cls, raw: bytes, strict: bool = True) -> 'ThreatBundle':
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ExchangeError("MALFORMED_BUNDLE", f"bundle is not JSON: {e}") from e
        return cls.from_dict(data, strict=strict)


_PATTERN_TEMPLATES = (
    "[ipv4-addr:value = '{ip}']",
    "[domain-name:value = '{host}.example.net']",
    "[file:hashes.'SHA-256' = '{sha}']",
    "[url:value = 'https://{host}.example.org/{path}']",
)


def generate_bundle(rng: random.Random, indicator_count: int, created_by: str = "",
                    sentinel: Optional[str] = None,
                    start: datetime = datetime(2024, 1, 1, tzinfo=UTC)) -> ThreatBundle:
    """Random but reproducible indicator bundle; sentinel goes into the first label"""
    def next_uuid() -> str:
        return str(uuid.UUID(int=rng.getrandbits(128), version=4))

    indicators = []
    for index in range(indicator_count):
        template = rng.choice(_PATTERN_TEMPLATES)
        pattern = template.format(
            ip=".".join(str(rng.randint(1, 254)) for _ in range(4)),
            host="".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(8)),
            sha="%064x" % rng.getrandbits(256),
            path=rng.randint(1, 9999),
        )
        labels = [rng.choice(["malicious-activity", "anomalous-activity", "attribution", "compromised"])]
        if sentinel and index == 0:
            labels.append(sentinel)
        indicators.append(Indicator(
            id=INDICATOR_PREFIX + next_uuid(),
            pattern=pattern,
            valid_from=start + timedelta(minutes=rng.randint(0, 60 * 24 * 30)),
            labels=labels,
        ))
    return ThreatBundle(bundle_id=BUNDLE_PREFIX + next_uuid(), objects=indicators, created_by=created_by)
