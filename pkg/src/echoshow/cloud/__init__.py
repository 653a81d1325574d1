"""Remote acquisition: endpoint catalog, credential lifecycle and client."""

from .auth import AuthState, RefreshRejected, ensure_credentials
from .catalog import (AuthMethod, EndpointDescriptor, auth_for_host, deprecated_endpoints,
                      endpoint_catalog)
from .client import (CloudClient, CsrfCheckFailed, HttpStatusError, MissingParameterError,
                     VoiceRequestRecord, acquire_media, acquire_voice_history, replay_log, sweep)
from .transport import HttpRequest, HttpResponse, RequestsTransport

__all__ = [
    "AuthState", "RefreshRejected", "ensure_credentials", "AuthMethod", "EndpointDescriptor",
    "auth_for_host", "deprecated_endpoints", "endpoint_catalog", "CloudClient", "CsrfCheckFailed",
    "HttpStatusError", "MissingParameterError", "VoiceRequestRecord", "acquire_media",
    "acquire_voice_history", "replay_log", "sweep", "HttpRequest", "HttpResponse",
    "RequestsTransport",
]
