from typing import Callable, Dict, List, Tuple, Type

from marshmallow import ValidationError

from ppd.errors import (
    ConfigurationError,
    DomainError,
    IngestionError,
    NumericError,
    PredictiveError,
    UnsupportedError,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4

Handler = Callable[[BaseException], Tuple[int, dict]]


class ErrorDispatcher:
    """Maps exceptions to (exit status, machine-readable record), most specific type first."""

    def __init__(self):
        self.handlers: Dict[Type[BaseException], Handler] = {}

    def errorhandler(self, exc_type: Type[BaseException]):
        def register(fn: Handler) -> Handler:
            self.handlers[exc_type] = fn
            return fn
        return register

    def handle(self, e: BaseException) -> Tuple[int, dict]:
        for klass in type(e).__mro__:
            if klass in self.handlers:
                return self.handlers[klass](e)
        return EXIT_FAILURE, {'error': type(e).__name__, 'message': str(e)}


def offending_keys(messages, prefix: str = "") -> List[str]:
    """Dotted keys named in marshmallow's nested error messages."""
    if not isinstance(messages, dict):
        return [prefix] if prefix else []
    keys = []
    for key, value in messages.items():
        name = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict) and not all(isinstance(k, int) for k in value):
            keys.extend(offending_keys(value, name))
        else:
            keys.append(name)
    return sorted(keys)


def register_error_handlers(dispatcher: ErrorDispatcher):
    @dispatcher.errorhandler(ValidationError)
    def handle_validation_error(e):
        return EXIT_CONFIG, {'error': 'Validation error', 'keys': offending_keys(e.messages), 'details': e.messages}

    @dispatcher.errorhandler(ConfigurationError)
    def handle_configuration_error(e):
        return EXIT_CONFIG, e.to_record()

    @dispatcher.errorhandler(UnsupportedError)
    def handle_unsupported(e):
        return EXIT_CONFIG, e.to_record()

    @dispatcher.errorhandler(NumericError)
    def handle_numeric_error(e):
        return EXIT_NUMERIC, e.to_record()

    @dispatcher.errorhandler(PredictiveError)
    def handle_predictive_error(e):
        return EXIT_NUMERIC, e.to_record()

    @dispatcher.errorhandler(IngestionError)
    def handle_ingestion_error(e):
        return EXIT_DATA, e.to_record()

    @dispatcher.errorhandler(DomainError)
    def handle_domain_error(e):
        return EXIT_DATA, e.to_record()

    @dispatcher.errorhandler(Exception)
    def handle_internal_error(e):
        return EXIT_FAILURE, {'error': 'Internal error', 'type': type(e).__name__, 'message': str(e)}
