"""snapfs: versioned, content-addressed software distribution.

Publish directory trees as immutable Merkle-tree snapshots, serve them over
HTTP as cacheable immutable objects, read any historical snapshot lazily on
clients, and diff snapshots by hash-pruned tree comparison.
"""

__version__ = "0.1.0"

from .cas import ChunkList, ObjectStore, StoreStats, object_id  # noqa: E402
from .catalog import Catalog, DirEntry, parse_catalog, resolve_path, serialize_catalog  # noqa: E402
from .client import Client, checkout, open_snapshot, sync, verify  # noqa: E402
from .diff import DiffReport, diff, diff_manifests  # noqa: E402
from .publisher import Repository, SnapshotManifest, TagDatabase  # noqa: E402
from .recipe import BuildRecipe, capture_recipe, check_recipe  # noqa: E402
from .workload import PRESETS, WorkloadProfile, generate_workload  # noqa: E402

__all__ = [
    "BuildRecipe", "Catalog", "ChunkList", "Client", "DiffReport", "DirEntry",
    "ObjectStore", "PRESETS", "Repository", "SnapshotManifest", "StoreStats",
    "TagDatabase", "WorkloadProfile", "capture_recipe", "check_recipe", "checkout",
    "diff", "diff_manifests", "generate_workload", "object_id", "open_snapshot",
    "parse_catalog", "resolve_path", "serialize_catalog", "sync", "verify",
]
