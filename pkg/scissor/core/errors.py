from datetime import datetime, timezone
from typing import Any, Dict, Optional


class ScissorError(Exception):
    """Base class for every error the laboratory raises on purpose."""

    code = "ScissorError"
    exit_status = 1

    def __init__(self, detail: str, **context: Any):
        super().__init__(detail)
        self.detail = detail
        self.context = context

    def to_record(self, epoch: int = 0) -> Dict[str, Any]:
        """
        Render the error in the same envelope the API used for failures.

        Args:
            epoch: Seconds since the Unix epoch used for the timestamp field

        Returns:
            A JSON-serializable error record
        """
        error: Dict[str, Any] = {"code": self.code, "message": self.detail}
        error.update({k: _plain(v) for k, v in self.context.items() if v is not None})
        return {
            "status": "error",
            "timestamp": datetime.fromtimestamp(epoch, tz=timezone.utc).isoformat(),
            "error": error,
        }


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)):
        return value
    return str(value)


class DomainError(ScissorError):
    code = "DomainError"


class InvalidTestCase(ScissorError):
    code = "InvalidTestCase"


class GenerationExhausted(ScissorError):
    code = "GenerationExhausted"


class SchemaMismatch(ScissorError):
    code = "SchemaMismatch"


class SingleClass(ScissorError):
    code = "SingleClass"


class DegenerateData(ScissorError):
    code = "DegenerateData"


class TooFewRows(ScissorError):
    code = "TooFewRows"


class InsufficientClass(ScissorError):
    code = "InsufficientClass"


class PoolExhausted(ScissorError):
    # Never raised: runs carry an exhausted flag and log this record.
    code = "PoolExhausted"


class ConfigInvalid(ScissorError):
    code = "ConfigInvalid"
    exit_status = 2


class StageFailure(ScissorError):
    code = "StageFailure"
    exit_status = 3

    def __init__(self, stage: str, cause: BaseException, path: Optional[str] = None):
        super().__init__(f"stage '{stage}' failed: {cause}", stage=stage, path=path,
                         cause=type(cause).__name__)
        self.stage = stage
        self.cause = cause
