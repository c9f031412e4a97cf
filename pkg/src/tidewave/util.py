"""Small shared helpers: error types, validation, file hashing."""

from __future__ import annotations

import hashlib


class ValidationError(ValueError):
    """Bad inputs, configs, or schemas. CLI maps this to exit code 1."""


class NumericalError(ArithmeticError):
    """Numerical failure (NaN loss, degenerate statistics). CLI exit code 3."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
