"""
Attribute-gated release of envelopes: time/location attestations signed by
the reader and evaluated against the envelope's access policy before the
session key is unwrapped. The gate runs on the reader's side, so unlike
real attribute-based encryption a modified client could skip it.
"""
import json
import logging
from dataclasses import replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional

from .crypto import verify
from .errors import PolicyError
from .identity import EnrolledIdentity
from .models.access_policy import AccessPolicy, AttributeAttestation, PolicyDecision, is_country_code
from .models.certificate import Certificate

logger = logging.getLogger(__name__)

DEFAULT_FRESHNESS = timedelta(seconds=300)

# Deny reasons, in evaluation order
REASON_ATTESTATION = "attestation"
REASON_TIME = "time"
REASON_LOCATION = "location"
REASON_ATTRIBUTES = "attributes"
REASON_FRESHNESS = "freshness"


def attest(identity: EnrolledIdentity, now: datetime, location: str,
           claimed_time: Optional[datetime] = None) -> AttributeAttestation:
    """Self-signed claim of the current time and country"""
    code = location.strip().upper() if isinstance(location, str) else location
    if not is_country_code(code):
        raise PolicyError("INVALID_COUNTRY_CODE", f"{location!r} is not an ISO-3166 alpha-2 country code")
    unsigned = AttributeAttestation(
        subject=identity.serial,
        claimed_time=claimed_time or now,
        claimed_location=code,
        issued_at=now,
    )
    return replace(unsigned, signature=identity.sign(unsigned.signing_payload()))


def verify_attestation(attestation: AttributeAttestation, certificate: Certificate) -> bool:
    if attestation.signature is None or attestation.subject != certificate.serial:
        return False
    return verify(attestation.signing_payload(), attestation.signature, certificate.public_key)


def evaluate(policy: AccessPolicy, attestation: Optional[AttributeAttestation], certificate: Certificate,
             eval_time: datetime, freshness: timedelta = DEFAULT_FRESHNESS) -> PolicyDecision:
    """Conjunction of the clauses the policy sets; the first failing one is the deny reason"""
    if policy.is_empty:
        return PolicyDecision.allow()
    if attestation is None or not verify_attestation(attestation, certificate):
        return PolicyDecision.deny(REASON_ATTESTATION)
    if policy.time_window is not None:
        not_before, not_after = policy.time_window
        if not not_before <= attestation.claimed_time < not_after:
            return PolicyDecision.deny(REASON_TIME)
    if policy.allowed_locations is not None and attestation.claimed_location not in policy.allowed_locations:
        return PolicyDecision.deny(REASON_LOCATION)
    if policy.required_attributes:
        held = certificate.attributes.as_map()
        if any(held.get(name) != value for name, value in policy.required_attributes.items()):
            return PolicyDecision.deny(REASON_ATTRIBUTES)
    if abs(eval_time - attestation.issued_at) > freshness:
        return PolicyDecision.deny(REASON_FRESHNESS)
    return PolicyDecision.allow()


def load_policy(path: Path) -> AccessPolicy:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PolicyError("INVALID_POLICY", f"cannot read policy {path}: {e}") from e
    return AccessPolicy.from_dict(data)
