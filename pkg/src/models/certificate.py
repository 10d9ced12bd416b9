from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, FrozenSet, Optional, Set

from ..canonical import canonical_json, format_utc, parse_utc
from ..crypto import Digest, Signature, cached_public_key, key_id_of, public_key_from_pem, verify


@dataclass(frozen=True)
class Subject:
    common_name: str
    organisation: str

    def to_dict(self) -> Dict[str, str]:
        return {'common_name': self.common_name, 'organisation': self.organisation}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Subject':
        return cls(common_name=data['common_name'], organisation=data['organisation'])

    def __str__(self) -> str:
        return f"CN={self.common_name},O={self.organisation}"


@dataclass(frozen=True)
class Csr:
    """
    Certificate Signing Request: public key plus identity, self-signed
    with the matching private key
    """
    public_key_pem: str
    subject: Subject
    requested_attributes: Dict[str, str]
    self_signature: Signature

    def signing_payload(self) -> bytes:
        return canonical_json({
            'public_key': self.public_key_pem,
            'subject': self.subject.to_dict(),
            'requested_attributes': self.requested_attributes,
        })

    def verify(self) -> bool:
        """True iff the self-signature verifies under the embedded key"""
        try:
            return verify(self.signing_payload(), self.self_signature, public_key_from_pem(self.public_key_pem))
        except Exception:
            return False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'public_key': self.public_key_pem,
            'subject': self.subject.to_dict(),
            'requested_attributes': dict(self.requested_attributes),
            'self_signature': self.self_signature.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Csr':
        return cls(
            public_key_pem=data['public_key'],
            subject=Subject.from_dict(data['subject']),
            requested_attributes=dict(data.get('requested_attributes', {})),
            self_signature=Signature.from_dict(data['self_signature']),
        )


@dataclass(frozen=True)
class CertificateAttributes:
    org: str
    role: str
    extra: Dict[str, str] = field(default_factory=dict)

    def as_map(self) -> Dict[str, str]:
        """Flat attribute view used by access policies"""
        merged = dict(self.extra)
        merged.update({'org': self.org, 'role': self.role})
        return merged

    def to_dict(self) -> Dict[str, Any]:
        return {'org': self.org, 'role': self.role, 'extra': dict(self.extra)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CertificateAttributes':
        return cls(org=data['org'], role=data['role'], extra=dict(data.get('extra', {})))


@dataclass(frozen=True)
class Certificate:
    """
    X.509-like certificate in canonical JSON form.
    The CA signs the canonical encoding of every field except ca_signature.
    """
    serial: int
    subject: Subject
    public_key_pem: str
    attributes: CertificateAttributes
    issuer_key_id: Digest
    issuer_name: str
    not_before: datetime
    not_after: datetime
    ca_signature: Optional[Signature] = None

    @property
    def public_key(self):
        return cached_public_key(self.public_key_pem)

    @property
    def key_id(self) -> Digest:
        return key_id_of(self.public_key)

    @property
    def org(self) -> str:
        return self.attributes.org

    @property
    def role(self) -> str:
        return self.attributes.role

    def tbs_payload(self) -> bytes:
        """To-be-signed encoding"""
        data = self.to_dict()
        data.pop('ca_signature')
        return canonical_json(data)

    def is_within_validity(self, now: datetime) -> bool:
        return self.not_before <= now < self.not_after

    def to_dict(self) -> Dict[str, Any]:
        return {
            'serial': self.serial,
            'subject': self.subject.to_dict(),
            'public_key': self.public_key_pem,
            'attributes': self.attributes.to_dict(),
            'issuer_key_id': self.issuer_key_id.hex,
            'issuer_name': self.issuer_name,
            'not_before': format_utc(self.not_before),
            'not_after': format_utc(self.not_after),
            'ca_signature': self.ca_signature.to_dict() if self.ca_signature else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Certificate':
        signature = data.get('ca_signature')
        return cls(
            serial=int(data['serial']),
            subject=Subject.from_dict(data['subject']),
            public_key_pem=data['public_key'],
            attributes=CertificateAttributes.from_dict(data['attributes']),
            issuer_key_id=Digest.from_hex(data['issuer_key_id']),
            issuer_name=data.get('issuer_name', ''),
            not_before=parse_utc(data['not_before']),
            not_after=parse_utc(data['not_after']),
            ca_signature=Signature.from_dict(signature) if signature else None,
        )


@dataclass(frozen=True)
class Crl:
    """Signed, versioned, monotone set of revoked serials"""
    version: int
    revoked_serials: FrozenSet[int]
    issued_at: datetime
    issuer_key_id: Digest
    ca_signature: Optional[Signature] = None

    def tbs_payload(self) -> bytes:
        data = self.to_dict()
        data.pop('ca_signature')
        return canonical_json(data)

    def is_revoked(self, serial: int) -> bool:
        return serial in self.revoked_serials

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': self.version,
            'revoked_serials': sorted(self.revoked_serials),
            'issued_at': format_utc(self.issued_at),
            'issuer_key_id': self.issuer_key_id.hex,
            'ca_signature': self.ca_signature.to_dict() if self.ca_signature else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Crl':
        signature = data.get('ca_signature')
        return cls(
            version=int(data['version']),
            revoked_serials=frozenset(int(s) for s in data['revoked_serials']),
            issued_at=parse_utc(data['issued_at']),
            issuer_key_id=Digest.from_hex(data['issuer_key_id']),
            ca_signature=Signature.from_dict(signature) if signature else None,
        )


@dataclass
class MspConfig:
    """
    Membership Service Provider configuration: trusted CA keys, the CRL of
    each trusted CA and the role -> permitted operations table
    """
    msp_id: str
    trusted_ca_keys: Dict[str, str]                       # issuer key id hex -> public key PEM
    crls: Dict[str, Crl] = field(default_factory=dict)    # issuer key id hex -> latest CRL
    access_policies: Dict[str, Set[str]] = field(default_factory=lambda: {'*': {'*'}})

    def __post_init__(self):
        if not self.trusted_ca_keys:
            raise ValueError("MSP configuration needs at least one trusted CA")

    @property
    def trusted_ca_key_ids(self) -> Set[str]:
        return set(self.trusted_ca_keys)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'msp_id': self.msp_id,
            'trusted_ca_keys': dict(self.trusted_ca_keys),
            'crls': {key: crl.to_dict() for key, crl in self.crls.items()},
            'access_policies': {role: sorted(ops) for role, ops in self.access_policies.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MspConfig':
        return cls(
            msp_id=data['msp_id'],
            trusted_ca_keys=dict(data['trusted_ca_keys']),
            crls={key: Crl.from_dict(crl) for key, crl in data.get('crls', {}).items()},
            access_policies={role: set(ops) for role, ops in data.get('access_policies', {'*': ['*']}).items()},
        )


class EnrollmentStatus(Enum):
    ENROLLED = "Enrolled"
    REVOKED = "Revoked"


@dataclass
class IdentityRecord:
    certificate: Certificate
    enrollment_status: EnrollmentStatus
    enrolled_at: datetime

    @property
    def serial(self) -> int:
        return self.certificate.serial

    def mark_revoked(self) -> None:
        self.enrollment_status = EnrollmentStatus.REVOKED

    def to_dict(self) -> Dict[str, Any]:
        return {
            'certificate': self.certificate.to_dict(),
            'enrollment_status': self.enrollment_status.value,
            'enrolled_at': format_utc(self.enrolled_at),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'IdentityRecord':
        return cls(
            certificate=Certificate.from_dict(data['certificate']),
            enrollment_status=EnrollmentStatus(data['enrollment_status']),
            enrolled_at=parse_utc(data['enrolled_at']),
        )
