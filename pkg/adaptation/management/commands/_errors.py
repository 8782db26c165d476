from __future__ import annotations

from contextlib import contextmanager

from django.core.management.base import CommandError

from adaptation.exceptions import ConfigError, ContractError, NumericalError


EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@contextmanager
def command_errors():
    """Map library errors onto the CLI exit codes."""
    try:
        yield
    except (ConfigError, ContractError) as exc:
        raise CommandError(f'{type(exc).__name__}: {exc}', returncode=EXIT_CONFIG) from exc
    except NumericalError as exc:
        raise CommandError(f'{type(exc).__name__}: {exc}', returncode=EXIT_NUMERICAL) from exc
