"""Local artifacts: catalog, tree scan, parsers and device-log events."""

from .catalog import ArtifactDescriptor, Source, by_id, catalog
from .logs import (DeviceEvent, DropboxLogEntry, EventKind, LogCategory, MotionInfo,
                   extract_events, read_dropbox_logs)
from .parsers import (PARSERS, ArtifactParseError, ArtifactRecord, EnrolledProfile, WifiCredential,
                      parse_recognition_db, parse_shared_prefs, parse_table_artifact,
                      parse_wifi_config)
from .scan import extract_tree, scan_tree

__all__ = [
    "ArtifactDescriptor", "Source", "by_id", "catalog",
    "DeviceEvent", "DropboxLogEntry", "EventKind", "LogCategory", "MotionInfo",
    "extract_events", "read_dropbox_logs",
    "PARSERS", "ArtifactParseError", "ArtifactRecord", "EnrolledProfile", "WifiCredential",
    "parse_recognition_db", "parse_shared_prefs", "parse_table_artifact", "parse_wifi_config",
    "extract_tree", "scan_tree",
]
