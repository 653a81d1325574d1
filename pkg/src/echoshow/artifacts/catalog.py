"""Local artifact catalog for the Echo Show 15 and its companion apps.

Globs are relative to the root of an extracted ``data`` partition (device
rows) or of a phone's ``/data`` partition (companion-app rows), so the app
sandboxes appear under ``data/<package>/``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from ..ids import IdKind

C, D, M, K, P, V = (IdKind.CUSTOMER_ID, IdKind.DIRECTED_ID, IdKind.COMMS_ID,
                    IdKind.CONTACT_ID, IdKind.PERSON_ID, IdKind.PERSON_ID_V2)


class Source(str, enum.Enum):
    ECHO = "Echo"
    ALEXA_APP = "AlexaApp"
    PHOTOS_APP = "PhotosApp"


@dataclass(frozen=True)
class ArtifactDescriptor:
    id: str
    source: Source
    path_glob: str
    parser: str
    yields_ids: frozenset[IdKind] = frozenset()
    volatile: bool = False
    description: str = ""

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source.value,
            "path_glob": self.path_glob,
            "parser": self.parser,
            "yields_ids": sorted(k.value for k in self.yields_ids),
            "volatile": self.volatile,
            "description": self.description,
        }


ALEXA_APP = "data/com.amazon.dee.app/"
PHOTOS_APP = "data/com.amazon.clouddrive.photos/"

VOLATILE_NOTE = "volatile: device logs and caches are purged after roughly three days"


def _d(id, source, glob, parser, ids=(), volatile=False, description=""):
    return ArtifactDescriptor(id, source, glob, parser, frozenset(ids), volatile, description)


_E, _A, _P = Source.ECHO, Source.ALEXA_APP, Source.PHOTOS_APP

_CATALOG = (
    _d("wifi-config", _E, "misc/wifi/WifiConfigStore.xml", "wifi_config",
       description="Wi-Fi credentials"),
    _d("search-image-cache", _E, "data/com.amazon.aria/cache/image_manager_disk_cache/**",
       "file_inventory", volatile=True, description="Cached images of searches"),
    _d("screenshots", _E, "system_ce/0/snapshots/**", "file_inventory",
       description="Random screenshots"),
    _d("browser-screenshots", _E, "data/com.amazon.cloud9/app_textures/**", "file_inventory",
       description="Random browser screenshots"),
    _d("prime-video-history", _E, "data/com.amazon.avod/files/databases/dbplaybackhistory",
       "sqlite_table", description="Prime Video watch history"),
    _d("last-voice-interaction", _E,
       "data/amazon.speech.sim/shared_prefs/user_activity_prefs.xml", "shared_prefs",
       description="Last interaction by voice"),
    _d("known-devices-registry", _E,
       "data/com.amazon.alexahybridremoteskill/files/customerHomeRegistry.db", "sqlite_table",
       description="Known devices"),
    _d("known-devices-smarthome", _E,
       "data/com.amazon.gloria.smarthome/shared_prefs/SmartHomeEntityCache.xml", "shared_prefs",
       description="Known devices"),
    _d("wifi-camera-picture", _E, "data/com.amazon.cardinal/cache/**", "file_inventory",
       volatile=True, description="Picture of connected Wi-Fi camera"),
    _d("token-store", _E, "data/com.amazon.imp/databases/map_data_storage_v2.db",
       "credential_store", (D, P, V), description="Encrypted API credentials"),
    _d("alta-user-data", _E,
       "securedStorageLocation/com.amazon.alta.h2clientservice/databases/alta.h2clientservice.db",
       "sqlite_table", description="User data & internal IDs"),
    _d("dropbox-logs", _E, "system/dropbox/**", "dropbox_log", (P,), volatile=True,
       description="Log files"),
    _d("logd-logs", _E, "logd/**", "dropbox_log", (P,), volatile=True, description="Log files"),
    _d("browser-data", _E, "data/com.amazon.cloud9/app_amazon_webview/amazon_webview/**",
       "sqlite_table", description="Browser history, cookies, login data"),
    _d("photobooth-prefs", _E, "data/com.amazon.zordon/shared_prefs/photobooth.xml",
       "shared_prefs", description="Timestamp of last picture"),
    _d("photo-metadata", _E, "data/com.amazon.zordon/databases/*.mixtape.db", "sqlite_table",
       description="Photo & video metadata"),
    _d("visual-id-photos", _E, "data/com.amazon.edgecvs/files/album/**", "file_inventory",
       description="Encrypted Visual ID photos (inventoried, not decrypted)"),
    _d("notification-log", _E, "system/notification_log.db", "sqlite_table",
       description="Event log"),
    _d("calendar-boot-prefs", _E,
       "data/com.amazon.knight.calendar/shared_prefs/com.amazon.knight.calendar_preferences.xml",
       "shared_prefs", description="Timestamp of last boot"),
    _d("visual-id-recognition", _E, "data/com.amazon.alexa.identity/databases/recognition",
       "recognition_db", (P,), description="Local user IDs with Visual ID"),
    # Alexa companion app
    _d("alexa-service-identity", _A, ALEXA_APP + "shared_prefs/service.identity.xml",
       "shared_prefs", (C, D, M, P), description="User data & internal IDs"),
    _d("alexa-shared-prefs", _A, ALEXA_APP + "shared_prefs/SHARED_PREFS.xml", "shared_prefs",
       (D, M), description="Timestamp last app start"),
    _d("alexa-shared-prefs-identity", _A, ALEXA_APP + "shared_prefs/SHARED_PREFS_IDENTITY.xml",
       "shared_prefs", (D, M), description="User data & internal IDs"),
    _d("alexa-session-storage", _A, ALEXA_APP + "shared_prefs/mobilytics.session-storage.xml",
       "shared_prefs", description="Timestamps of last session"),
    _d("alexa-webview-cookies", _A, ALEXA_APP + "app_webview/Cookies", "sqlite_table",
       description="Session cookies"),
    _d("alexa-webview-appcache", _A, ALEXA_APP + "app_webview/Application Cache/Cache/**",
       "file_inventory", volatile=True, description="Cached files of webviews"),
    _d("alexa-webview-chromium-cache", _A, ALEXA_APP + "cache/org.chromium.android_webview/**",
       "file_inventory", volatile=True, description="Cached files of webviews"),
    _d("alexa-token-store", _A, ALEXA_APP + "databases/map_data_storage_v2.db",
       "credential_store", (D, P, V), description="Encrypted API credentials"),
    _d("alexa-lists", _A, ALEXA_APP + "databases/DataStore.db", "sqlite_table", (C,),
       description="Shopping & To-do lists"),
    _d("alexa-comms-identity", _A, ALEXA_APP + "databases/comms-core-identity-database",
       "sqlite_table", (D, M, V), description="User data & internal IDs"),
    _d("alexa-comms", _A, ALEXA_APP + "databases/comms.db", "sqlite_table",
       description="Conversations (possibly encrypted)"),
    # Photos companion app
    _d("photos-image-cache", _P, PHOTOS_APP + "cache/image_manager_disk_cache/**",
       "file_inventory", volatile=True, description="Cached pictures"),
    _d("photos-token-store-v1", _P, PHOTOS_APP + "databases/map_data_storage.db",
       "credential_store", (D,), description="API credentials (unencrypted)"),
    _d("photos-discovery-db", _P, PHOTOS_APP + "databases/discovery_database_*", "sqlite_table",
       description="Metadata of uploaded pictures"),
    _d("photos-metadata-cache", _P, PHOTOS_APP + "databases/metadata_cache_database_*",
       "sqlite_table", (C,), description="Metadata (also EXIF) of pictures"),
)

# Rows present in the source inventory but deprecated; kept out of the catalog.
DEPRECATED_PATHS = (ALEXA_APP + "databases/RKStorage1",)


def catalog() -> list[ArtifactDescriptor]:
    return list(_CATALOG)


def by_id(descriptor_id: str) -> ArtifactDescriptor:
    for d in _CATALOG:
        if d.id == descriptor_id:
            return d
    raise KeyError(descriptor_id)
