from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, FrozenSet, Optional, Tuple

import pytz

from ..canonical import canonical_json, format_utc, parse_utc
from ..crypto import Signature
from ..errors import PolicyError


def is_country_code(code: str) -> bool:
    """ISO-3166 alpha-2, checked against the pytz country registry"""
    return isinstance(code, str) and code in pytz.country_names


@dataclass(frozen=True)
class AccessPolicy:
    """
    Attribute gate on an envelope. Every clause is optional; a policy with
    no clause allows everything. time_window is [not_before, not_after).
    """
    time_window: Optional[Tuple[datetime, datetime]] = None
    allowed_locations: Optional[FrozenSet[str]] = None
    required_attributes: Optional[Dict[str, str]] = field(default=None, hash=False)

    def __post_init__(self):
        if self.time_window is not None:
            not_before, not_after = self.time_window
            if not not_before < not_after:
                raise PolicyError("INVALID_POLICY", "time_window needs not_before < not_after")
        if self.allowed_locations is not None:
            bad = sorted(c for c in self.allowed_locations if not is_country_code(c))
            if bad:
                raise PolicyError("INVALID_POLICY", f"unknown country codes in policy: {', '.join(bad)}")

    @property
    def is_empty(self) -> bool:
        return self.time_window is None and self.allowed_locations is None and not self.required_attributes

    def without(self, clause: str) -> 'AccessPolicy':
        """Copy with one clause removed"""
        values = {
            'time_window': self.time_window,
            'allowed_locations': self.allowed_locations,
            'required_attributes': self.required_attributes,
        }
        values[clause] = None
        return AccessPolicy(**values)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        if self.time_window is not None:
            data['time_window'] = [format_utc(self.time_window[0]), format_utc(self.time_window[1])]
        if self.allowed_locations is not None:
            data['allowed_locations'] = sorted(self.allowed_locations)
        if self.required_attributes:
            data['required_attributes'] = dict(self.required_attributes)
        return data

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'AccessPolicy':
        if not data:
            return cls()
        if not isinstance(data, dict):
            raise PolicyError("INVALID_POLICY", "policy must be a JSON object")
        unknown = set(data) - {'time_window', 'allowed_locations', 'required_attributes'}
        if unknown:
            raise PolicyError("INVALID_POLICY", f"unknown policy clauses: {', '.join(sorted(unknown))}")
        try:
            window = data.get('time_window')
            if window is not None:
                if len(window) != 2:
                    raise ValueError("time_window needs two timestamps")
                window = (parse_utc(window[0]), parse_utc(window[1]))
            locations = data.get('allowed_locations')
            attributes = data.get('required_attributes')
            return cls(
                time_window=window,
                allowed_locations=frozenset(str(c).upper() for c in locations) if locations is not None else None,
                required_attributes={str(k): str(v) for k, v in attributes.items()} if attributes else None,
            )
        except (ValueError, TypeError, AttributeError) as e:
            raise PolicyError("INVALID_POLICY", str(e)) from e


@dataclass(frozen=True)
class AttributeAttestation:
    """Receiver's signed claim of where and when it is reading"""
    subject: int
    claimed_time: datetime
    claimed_location: str
    issued_at: datetime
    signature: Optional[Signature] = None

    def signing_payload(self) -> bytes:
        data = self.to_dict()
        data.pop('signature')
        return canonical_json(data)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'subject': self.subject,
            'claimed_time': format_utc(self.claimed_time),
            'claimed_location': self.claimed_location,
            'issued_at': format_utc(self.issued_at),
            'signature': self.signature.to_dict() if self.signature else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AttributeAttestation':
        try:
            signature = data.get('signature')
            return cls(
                subject=int(data['subject']),
                claimed_time=parse_utc(data['claimed_time']),
                claimed_location=data['claimed_location'],
                issued_at=parse_utc(data['issued_at']),
                signature=Signature.from_dict(signature) if signature else None,
            )
        except (KeyError, ValueError, TypeError) as e:
            raise PolicyError("INVALID_ATTESTATION", f"unreadable attestation: {e}") from e


@dataclass(frozen=True)
class PolicyDecision:
    allowed: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.allowed

    @classmethod
    def allow(cls) -> 'PolicyDecision':
        return cls(True)

    @classmethod
    def deny(cls, reason: str) -> 'PolicyDecision':
        return cls(False, reason)
