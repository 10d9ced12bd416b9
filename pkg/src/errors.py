from typing import Dict, Tuple

# code -> (owning module, CLI exit code)
ERROR_CODES: Dict[str, Tuple[str, int]] = {
    # crypto
    "ENTROPY_FAILURE": ("crypto", 1),
    "WEAK_SEED": ("crypto", 2),
    "PLAINTEXT_TOO_LARGE": ("crypto", 4),
    "AUTH_FAILURE": ("crypto", 4),
    "UNWRAP_FAILURE": ("crypto", 4),
    "MALFORMED_KEY": ("crypto", 4),
    # identity
    "EMPTY_COMMON_NAME": ("identity", 2),
    "INVALID_CSR": ("identity", 4),
    "DUPLICATE_SUBJECT": ("identity", 5),
    "UNKNOWN_SERIAL": ("identity", 5),
    "UNTRUSTED_ISSUER": ("identity", 3),
    "EXPIRED": ("identity", 3),
    "REVOKED": ("identity", 3),
    # ledger
    "DUPLICATE_CHANNEL": ("ledger", 5),
    "EMPTY_MEMBERSHIP": ("ledger", 2),
    "UNKNOWN_CHANNEL": ("ledger", 5),
    "IDENTITY_REJECTED": ("ledger", 3),
    "NOT_A_MEMBER": ("ledger", 3),
    "CHANNEL_CLOSED": ("ledger", 3),
    "POLICY_NOT_MET": ("ledger", 6),
    "ENDORSEMENT_MISMATCH": ("ledger", 6),
    "BROKEN_CHAIN": ("ledger", 4),
    "TX_INVALID": ("ledger", 6),
    "COMMIT_TIMEOUT": ("ledger", 6),
    # contract
    "CONTRACT_ERROR": ("contract", 1),
    "EMPTY_KEY": ("contract", 2),
    "NOT_FOUND": ("contract", 5),
    "TOMBSTONED": ("contract", 5),
    "INTEGRITY_MISMATCH": ("contract", 4),
    "NOT_AUTHORISED": ("contract", 3),
    "ALREADY_READ": ("contract", 5),
    "QUERY_ONLY": ("contract", 2),
    # exchange
    "NO_PUBLISHED_KEY": ("exchange", 5),
    "BUNDLE_TOO_LARGE": ("exchange", 2),
    "MALFORMED_BUNDLE": ("exchange", 4),
    "NO_EXCHANGE_KEY": ("exchange", 5),
    # policy
    "POLICY_DENIED": ("policy", 3),
    "INVALID_POLICY": ("policy", 2),
    "INVALID_COUNTRY_CODE": ("policy", 2),
    "INVALID_ATTESTATION": ("policy", 3),
    # bench
    "SETUP_FAILURE": ("bench", 1),
    "INVALID_WORKLOAD": ("bench", 2),
    "EMPTY_SWEEP": ("bench", 2),
    # cli
    "UNKNOWN_COMMAND": ("cli", 2),
    "USAGE": ("cli", 2),
    "DATA_DIR_NOT_EMPTY": ("cli", 5),
    "UNKNOWN_IDENTITY": ("cli", 5),
    "INVALID_CONFIG": ("cli", 2),
    "IO_ERROR": ("cli", 1),
}


class TipsError(Exception):
    """
    Base error carrying a stable machine-readable code.
    The CLI renders it as `ERROR <CODE>: <message>`.
    """
    module = "tips"

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message or code.replace("_", " ").lower()

    @property
    def exit_code(self) -> int:
        return ERROR_CODES.get(self.code, (self.module, 1))[1]

    def to_dict(self):
        return {"code": self.code, "message": self.message}


class CryptoError(TipsError):
    module = "crypto"


class IdentityError(TipsError):
    module = "identity"


class LedgerError(TipsError):
    module = "ledger"


class ContractError(TipsError):
    module = "contract"


class ExchangeError(TipsError):
    module = "exchange"


class PolicyError(TipsError):
    module = "policy"


class BenchError(TipsError):
    module = "bench"


class CliError(TipsError):
    module = "cli"


_MODULE_ERRORS = {
    cls.module: cls
    for cls in (CryptoError, IdentityError, LedgerError, ContractError,
                ExchangeError, PolicyError, BenchError, CliError)
}


def error_for(code: str, message: str = "") -> TipsError:
    """Build the error subclass of the module that owns `code`"""
    module = ERROR_CODES.get(code, ("tips", 1))[0]
    return _MODULE_ERRORS.get(module, TipsError)(code, message)
