"""Exception hierarchy shared by all modules.

Every error carries the process exit code the CLI maps it to, so the
command layer never has to know which module raised.
"""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SCHEMA = 4
EXIT_CRYPTO = 5
EXIT_AUTH = 6
EXIT_ROUTING = 7
EXIT_NETWORK = 8
EXIT_EMPTY = 9


class EchoShowError(Exception):
    exit_code = 1


class InputError(EchoShowError):
    """Unreadable input, bounds violations, short reads."""

    exit_code = EXIT_IO


class SchemaError(EchoShowError):
    """A file does not have the structure a parser requires."""

    exit_code = EXIT_SCHEMA


class CryptoError(EchoShowError):
    exit_code = EXIT_CRYPTO


class AuthError(EchoShowError):
    exit_code = EXIT_AUTH


class RoutingError(EchoShowError):
    exit_code = EXIT_ROUTING


class NetworkError(EchoShowError):
    exit_code = EXIT_NETWORK
