"""
Membership services: certificate authority, CSR flow, enrollment,
revocation and identity validation.
"""
import logging
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set

from .crypto import KeyPair, cached_public_key, generate_keypair, private_key_from_pem, sign, verify
from .errors import IdentityError
from .models.certificate import (
    Certificate,
    CertificateAttributes,
    Crl,
    Csr,
    EnrollmentStatus,
    IdentityRecord,
    MspConfig,
    Subject,
)

logger = logging.getLogger(__name__)

DEFAULT_VALIDITY = timedelta(days=365)
DEFAULT_ROLE = "member"


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.valid


def create_csr(keypair: KeyPair, subject: Subject, requested_attributes: Optional[Mapping[str, str]] = None) -> Csr:
    """Build a CSR self-signed with the key pair being certified"""
    if not subject.common_name or not subject.common_name.strip():
        raise IdentityError("EMPTY_COMMON_NAME", "subject common_name must not be empty")
    attributes = {str(k): str(v) for k, v in (requested_attributes or {}).items()}
    unsigned = Csr(
        public_key_pem=keypair.public_key_pem(),
        subject=subject,
        requested_attributes=attributes,
        self_signature=None,
    )
    return replace(unsigned, self_signature=sign(unsigned.signing_payload(), keypair.private_key))


class CertificateAuthority:
    """
    Issuing CA. Single writer: issuance and revocation are serialized on an
    internal lock; reads of the issued registry and CRL are lock-free snapshots.
    """

    def __init__(self, name: str, keypair: KeyPair, crl: Crl,
                 issued: Optional[Dict[int, Certificate]] = None, next_serial: int = 1):
        self.name = name
        self.keypair = keypair
        self.crl = crl
        self.issued: Dict[int, Certificate] = dict(issued or {})
        self.next_serial = max(next_serial, max(self.issued, default=0) + 1)
        self._lock = threading.Lock()

    @classmethod
    def create(cls, name: str, now: datetime, seed: Optional[bytes] = None) -> 'CertificateAuthority':
        keypair = generate_keypair(seed)
        empty = Crl(version=0, revoked_serials=frozenset(), issued_at=now, issuer_key_id=keypair.key_id)
        ca = cls(name=name, keypair=keypair, crl=cls._sign_crl(keypair, empty))
        logger.info("Created certificate authority %s (%s)", name, keypair.key_id.hex[:16])
        return ca

    @property
    def key_id_hex(self) -> str:
        return self.keypair.key_id.hex

    @property
    def public_key_pem(self) -> str:
        return self.keypair.public_key_pem()

    @staticmethod
    def _sign_crl(keypair: KeyPair, crl: Crl) -> Crl:
        return replace(crl, ca_signature=sign(crl.tbs_payload(), keypair.private_key))

    def _live_holder(self, subject: Subject, now: datetime) -> Optional[Certificate]:
        for certificate in self.issued.values():
            if (certificate.subject == subject
                    and not self.crl.is_revoked(certificate.serial)
                    and certificate.is_within_validity(now)):
                return certificate
        return None

    def issue_certificate(self, csr: Csr, now: datetime, validity: timedelta = DEFAULT_VALIDITY) -> Certificate:
        """Verify the CSR and issue the next sequential serial"""
        if not csr.verify():
            raise IdentityError("INVALID_CSR", f"self-signature of CSR for {csr.subject} does not verify")
        if validity <= timedelta(0):
            raise IdentityError("INVALID_CSR", "validity must be positive")

        requested = dict(csr.requested_attributes)
        role = requested.pop('role', DEFAULT_ROLE)
        requested.pop('org', None)

        with self._lock:
            holder = self._live_holder(csr.subject, now)
            if holder is not None:
                raise IdentityError("DUPLICATE_SUBJECT", f"{csr.subject} already holds live certificate {holder.serial}")

            unsigned = Certificate(
                serial=self.next_serial,
                subject=csr.subject,
                public_key_pem=csr.public_key_pem,
                attributes=CertificateAttributes(org=csr.subject.organisation, role=role, extra=requested),
                issuer_key_id=self.keypair.key_id,
                issuer_name=self.name,
                not_before=now,
                not_after=now + validity,
            )
            certificate = replace(unsigned, ca_signature=sign(unsigned.tbs_payload(), self.keypair.private_key))
            self.issued[certificate.serial] = certificate
            self.next_serial += 1

        logger.info("Issued certificate %d to %s (role=%s)", certificate.serial, csr.subject, role)
        return certificate

    def revoke(self, serial: int, now: datetime) -> Crl:
        """Add a serial to the CRL; revoking twice returns the current CRL unchanged"""
        with self._lock:
            if serial not in self.issued:
                raise IdentityError("UNKNOWN_SERIAL", f"serial {serial} was not issued by {self.name}")
            if self.crl.is_revoked(serial):
                return self.crl
            updated = Crl(
                version=self.crl.version + 1,
                revoked_serials=self.crl.revoked_serials | {serial},
                issued_at=now,
                issuer_key_id=self.keypair.key_id,
            )
            self.crl = self._sign_crl(self.keypair, updated)

        logger.info("Revoked certificate %d (CRL version %d)", serial, self.crl.version)
        return self.crl

    def renew(self, serial: int, csr: Csr, now: datetime, validity: timedelta = DEFAULT_VALIDITY) -> Certificate:
        """Renewal is revocation of the old serial followed by re-issuance"""
        self.revoke(serial, now)
        return self.issue_certificate(csr, now, validity)

    def verify_certificate(self, certificate: Certificate) -> bool:
        if certificate.ca_signature is None or certificate.issuer_key_id != self.keypair.key_id:
            return False
        return verify(certificate.tbs_payload(), certificate.ca_signature, self.keypair.public_key)

    def to_dict(self) -> Dict[str, Any]:
        """Public state; the private key is persisted separately"""
        return {
            'name': self.name,
            'public_key': self.public_key_pem,
            'key_id': self.key_id_hex,
            'next_serial': self.next_serial,
            'issued': [certificate.to_dict() for certificate in sorted(self.issued.values(), key=lambda c: c.serial)],
            'crl': self.crl.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], private_key_pem: str) -> 'CertificateAuthority':
        keypair = KeyPair.from_private_key(private_key_from_pem(private_key_pem))
        issued = {int(c['serial']): Certificate.from_dict(c) for c in data.get('issued', [])}
        return cls(
            name=data['name'],
            keypair=keypair,
            crl=Crl.from_dict(data['crl']),
            issued=issued,
            next_serial=int(data.get('next_serial', 1)),
        )


def validate_identity(msp: MspConfig, certificate: Certificate, now: datetime) -> ValidationResult:
    """
    Pure membership check: chains to a trusted CA, inside its validity
    window and absent from that CA's CRL
    """
    issuer = certificate.issuer_key_id.hex
    trusted_pem = msp.trusted_ca_keys.get(issuer)
    if trusted_pem is None or certificate.ca_signature is None:
        return ValidationResult(False, "UNTRUSTED_ISSUER")
    try:
        signed = verify(certificate.tbs_payload(), certificate.ca_signature, cached_public_key(trusted_pem))
    except Exception:
        signed = False
    if not signed:
        return ValidationResult(False, "UNTRUSTED_ISSUER")
    if not certificate.is_within_validity(now):
        return ValidationResult(False, "EXPIRED")
    crl = msp.crls.get(issuer)
    if crl is not None and crl.is_revoked(certificate.serial):
        return ValidationResult(False, "REVOKED")
    return ValidationResult(True)


class MembershipService:
    """
    The MSP: trusted CA configuration, pull-based CRL refresh from the
    registered authorities, enrollment registry and role-based permissions.
    """

    def __init__(self, config: MspConfig, authorities: Iterable[CertificateAuthority] = (),
                 registry: Optional[Dict[int, IdentityRecord]] = None):
        self.config = config
        self.authorities: Dict[str, CertificateAuthority] = {}
        self.registry: Dict[int, IdentityRecord] = dict(registry or {})
        self._lock = threading.RLock()
        for authority in authorities:
            self.add_authority(authority)

    @classmethod
    def for_authorities(cls, msp_id: str, authorities: List[CertificateAuthority],
                        access_policies: Optional[Dict[str, Iterable[str]]] = None) -> 'MembershipService':
        config = MspConfig(
            msp_id=msp_id,
            trusted_ca_keys={ca.key_id_hex: ca.public_key_pem for ca in authorities},
            access_policies={role: set(ops) for role, ops in (access_policies or {'*': ['*']}).items()},
        )
        return cls(config, authorities)

    def add_authority(self, authority: CertificateAuthority) -> None:
        with self._lock:
            self.authorities[authority.key_id_hex] = authority
            self.config.trusted_ca_keys.setdefault(authority.key_id_hex, authority.public_key_pem)
            self.accept_crl(authority.crl)

    def accept_crl(self, crl: Crl) -> bool:
        """Install a CRL if it is signed by its trusted CA and extends the current one"""
        issuer = crl.issuer_key_id.hex
        if self.config.crls.get(issuer) == crl:
            return True
        trusted_pem = self.config.trusted_ca_keys.get(issuer)
        if trusted_pem is None or crl.ca_signature is None:
            logger.warning("Ignoring CRL from untrusted issuer %s", issuer[:16])
            return False
        if not verify(crl.tbs_payload(), crl.ca_signature, cached_public_key(trusted_pem)):
            logger.warning("Ignoring CRL with bad signature from %s", issuer[:16])
            return False
        with self._lock:
            current = self.config.crls.get(issuer)
            if current is not None:
                if crl.version < current.version:
                    return False
                if not current.revoked_serials <= crl.revoked_serials:
                    logger.warning("Ignoring non-monotone CRL version %d from %s", crl.version, issuer[:16])
                    return False
            self.config.crls[issuer] = crl
            for serial in crl.revoked_serials:
                record = self.registry.get(serial)
                if record is not None and record.certificate.issuer_key_id.hex == issuer:
                    record.mark_revoked()
        return True

    def refresh_crls(self) -> None:
        for authority in list(self.authorities.values()):
            self.accept_crl(authority.crl)

    def validate(self, certificate: Certificate, now: datetime) -> ValidationResult:
        self.refresh_crls()
        return validate_identity(self.config, certificate, now)

    def enroll(self, certificate: Certificate, now: datetime) -> IdentityRecord:
        result = self.validate(certificate, now)
        if not result.valid:
            logger.warning("Enrollment of serial %d rejected: %s", certificate.serial, result.reason)
            raise IdentityError(result.reason, f"certificate {certificate.serial} rejected at enrollment")
        with self._lock:
            existing = self.registry.get(certificate.serial)
            if existing is not None and existing.certificate != certificate:
                raise IdentityError("DUPLICATE_SUBJECT", f"serial {certificate.serial} is already enrolled")
            if existing is None:
                existing = IdentityRecord(certificate, EnrollmentStatus.ENROLLED, now)
                self.registry[certificate.serial] = existing
        logger.info("Enrolled %s as serial %d", certificate.subject, certificate.serial)
        return existing

    def certificate(self, serial: int) -> Optional[Certificate]:
        record = self.registry.get(serial)
        return record.certificate if record else None

    def record(self, serial: int) -> Optional[IdentityRecord]:
        return self.registry.get(serial)

    def is_permitted(self, certificate: Certificate, operation: str) -> bool:
        policies = self.config.access_policies
        allowed: Set[str] = set(policies.get(certificate.role, policies.get('*', set())))
        return '*' in allowed or operation in allowed


@dataclass(frozen=True)
class EnrolledIdentity:
    """Certificate plus the matching key pair: what a client or peer signs with"""
    certificate: Certificate
    keypair: KeyPair

    def __post_init__(self):
        if self.certificate.key_id != self.keypair.key_id:
            raise IdentityError("INVALID_CSR", f"key pair does not match certificate {self.certificate.serial}")

    @property
    def serial(self) -> int:
        return self.certificate.serial

    @property
    def org(self) -> str:
        return self.certificate.org

    @property
    def role(self) -> str:
        return self.certificate.role

    @property
    def name(self) -> str:
        return self.certificate.subject.common_name

    def sign(self, payload: bytes):
        return sign(payload, self.keypair.private_key)


def issue_identity(ca: CertificateAuthority, msp: MembershipService, common_name: str, org: str, now: datetime,
                   role: str = DEFAULT_ROLE, attributes: Optional[Mapping[str, str]] = None,
                   seed: Optional[bytes] = None, keypair: Optional[KeyPair] = None,
                   validity: timedelta = DEFAULT_VALIDITY) -> EnrolledIdentity:
    """Key generation, CSR, issuance and enrollment in one step"""
    keypair = keypair or generate_keypair(seed)
    requested = dict(attributes or {})
    requested['role'] = role
    csr = create_csr(keypair, Subject(common_name, org), requested)
    certificate = ca.issue_certificate(csr, now, validity)
    msp.enroll(certificate, now)
    return EnrolledIdentity(certificate, keypair)
