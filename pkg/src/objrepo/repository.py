"""The management layer: persistent object store and lifecycle operations.

A repository stages empty objects, seals them with a minted URN at deposit,
registers the name with the naming service, and thereafter serves structural
and gateway requests against the stored object. Replication and migration
ship the canonical manifest to a peer repository and adjust the name's
location set; migration is deliberately multi-phase and never leaves a name
without at least one serving location, though a crash between phases can
briefly leave it at two.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.parse
import uuid
from dataclasses import dataclass
from pathlib import Path

from . import access
from .errors import (
    AccessDenied,
    AlreadyPresent,
    BadArguments,
    DigestMismatch,
    MalformedManifest,
    NamingUnavailable,
    NoSuchHandle,
    NoSuchLocation,
    NoSuchObject,
    NotRegistered,
    TargetUnreachable,
)
from .kernel import PRIMITIVE_METHODS, DigitalObjectKernel, deserialize_object
from .typesys import ContentTypeResolver
from .validate import require_endpoint, require_urn

log = logging.getLogger(__name__)


@dataclass
class RepositoryConfig:
    repo_name: str
    storage_root: str
    listen_endpoint: str
    naming_endpoint: str
    urn_namespace: str
    worker_limit: int = 8


def load_repository_config(path: str | Path) -> RepositoryConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BadArguments(f"cannot read repository config {path}: {exc}") from None
    try:
        config = RepositoryConfig(
            repo_name=doc["repo_name"],
            storage_root=doc["storage_root"],
            listen_endpoint=doc["listen_endpoint"],
            naming_endpoint=doc["naming_endpoint"],
            urn_namespace=doc["urn_namespace"],
            worker_limit=int(doc.get("worker_limit", 8)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BadArguments(f"invalid repository config {path}: {exc}") from None
    require_urn(config.repo_name, "repo_name")
    require_endpoint(config.listen_endpoint, "listen_endpoint")
    require_endpoint(config.naming_endpoint, "naming_endpoint")
    return config


def encode_name(name: str) -> str:
    """URL-safe filename component for an object URN."""
    return urllib.parse.quote(name, safe="")


class ObjectStore:
    """One canonical manifest file per deposited object, written with a
    temp-then-rename discipline; unreadable manifests are quarantined."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.objects_dir = self.root / "objects"
        self.quarantine_dir = self.root / "quarantine"
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self.quarantine_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, name: str) -> Path:
        return self.objects_dir / (encode_name(name) + ".json")

    def save_bytes(self, name: str, manifest: bytes) -> None:
        path = self.path_for(name)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_bytes(manifest)
        tmp.replace(path)

    def save(self, obj: DigitalObjectKernel) -> None:
        self.save_bytes(obj.name, obj.serialize())

    def read_bytes(self, name: str) -> bytes:
        return self.path_for(name).read_bytes()

    def delete(self, name: str) -> None:
        self.path_for(name).unlink(missing_ok=True)

    def quarantine(self, path: Path, why: Exception) -> None:
        target = self.quarantine_dir / f"{path.name}.{time.time_ns()}"
        path.replace(target)
        log.warning("quarantined %s: %s", path.name, why)

    def load_all(self) -> dict[str, DigitalObjectKernel]:
        """Parse and digest-verify every manifest; corrupt ones are moved
        aside and never served."""
        objects: dict[str, DigitalObjectKernel] = {}
        for path in sorted(self.objects_dir.glob("*.json")):
            try:
                obj = deserialize_object(path.read_bytes())
                if encode_name(obj.name) + ".json" != path.name:
                    raise MalformedManifest(f"manifest name {obj.name} does not match filename")
            except (MalformedManifest, DigestMismatch) as exc:
                self.quarantine(path, exc)
                continue
            objects[obj.name] = obj
        return objects


class Repository:
    """Service layer over a logical group of digital objects.

    ``naming`` is anything with the naming operation surface (the in-process
    :class:`~objrepo.naming.NamingService` or a wire client), and
    ``client_factory(endpoint)`` yields a peer-repository client used for
    type resolution and manifest transfer.
    """

    def __init__(self, config: RepositoryConfig, naming, client_factory, resolver=None):
        self.config = config
        self.endpoint = config.listen_endpoint
        self.naming = naming
        self.client_factory = client_factory
        self.resolver = resolver or ContentTypeResolver(naming, client_factory)
        self.store = ObjectStore(config.storage_root)
        self._objects = self.store.load_all()
        self._staged: dict[str, DigitalObjectKernel] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._guard = threading.Lock()
        #: test seam: called with a phase-boundary label during replicate/move
        self.fault_hook = None

    # -- internals --------------------------------------------------------

    def _lock_for(self, key: str) -> threading.RLock:
        with self._guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.RLock()
            return lock

    def _fault(self, point: str) -> None:
        if self.fault_hook is not None:
            self.fault_hook(point)

    def persist(self, obj: DigitalObjectKernel) -> None:
        self.store.save(obj)

    # -- lifecycle ----------------------------------------------------------

    def create_object(self) -> str:
        """Stage a fresh empty object; returns an opaque staging handle."""
        handle = uuid.uuid4().hex
        with self._guard:
            self._staged[handle] = DigitalObjectKernel()
        return handle

    def staged(self, handle: str) -> "ObjectSession":
        with self._guard:
            obj = self._staged.get(handle)
        if obj is None:
            raise NoSuchHandle(f"no staged object {handle!r}")
        return ObjectSession(self, obj, key=handle, staged_handle=handle)

    def deposit(self, handle: str) -> str:
        """Seal a staged object with a minted URN, persist it, and register
        the name. A naming failure aborts atomically: the object stays
        staged and unnamed."""
        with self._lock_for(handle):
            with self._guard:
                obj = self._staged.get(handle)
            if obj is None:
                raise NoSuchHandle(f"no staged object {handle!r}")
            name = f"urn:{self.config.urn_namespace}:{uuid.uuid4()}"
            obj.name = name
            try:
                self.naming.register(name, self.endpoint)
            except NamingUnavailable:
                obj.name = None
                raise
            try:
                self.store.save(obj)
            except Exception:
                # undo the registration so the aborted deposit leaves no trace
                try:
                    self.naming.remove_location(name, self.endpoint)
                except (NamingUnavailable, NotRegistered, NoSuchLocation):
                    log.warning("could not undo naming registration for %s", name)
                obj.name = None
                raise
            with self._guard:
                self._objects[name] = obj
                del self._staged[handle]
            return name

    def access(self, name: str) -> "ObjectSession":
        require_urn(name)
        with self._guard:
            obj = self._objects.get(name)
        if obj is None:
            raise NoSuchObject(f"{name} is not contained in this repository")
        return ObjectSession(self, obj, key=name)

    def contains(self, name: str) -> bool:
        with self._guard:
            return name in self._objects

    def names(self) -> list[str]:
        with self._guard:
            return sorted(self._objects)

    def delete(self, name: str) -> None:
        """Remove the object and its naming registration. Fails closed: if
        the naming service is unavailable nothing is deleted."""
        require_urn(name)
        with self._lock_for(name):
            if not self.contains(name):
                raise NoSuchObject(f"{name} is not contained in this repository")
            try:
                self.naming.remove_location(name, self.endpoint)
            except (NotRegistered, NoSuchLocation):
                pass  # stale registration; still remove the local copy
            self.store.delete(name)
            with self._guard:
                del self._objects[name]

    def _manifest_snapshot(self, name: str) -> bytes:
        with self._lock_for(name):
            with self._guard:
                obj = self._objects.get(name)
            if obj is None:
                raise NoSuchObject(f"{name} is not contained in this repository")
            return obj.serialize()

    def replicate(self, name: str, target: str) -> None:
        """Copy the manifest to a peer and add it as a resolve location.

        If naming is unavailable after the transfer, the replica is kept and
        the error surfaces for the caller to retry the naming update; a
        registered-but-duplicated copy is harmless, a half-deposit is not.
        """
        require_urn(name)
        require_endpoint(target, "target")
        if target == self.endpoint:
            raise AlreadyPresent(f"{name} is already at {target}")
        manifest = self._manifest_snapshot(name)
        self._fault("replicate:before-transfer")
        self.client_factory(target).receive_manifest(manifest)
        self._fault("replicate:after-transfer")
        self.naming.add_location(name, target)

    def move(self, name: str, target: str) -> None:
        """Migrate to a peer: copy manifest, add target location, drop the
        source location, then delete locally. A fault between phases leaves
        the name resolvable at one location or two, never at none."""
        require_urn(name)
        require_endpoint(target, "target")
        if target == self.endpoint:
            raise AlreadyPresent(f"{name} is already at {target}")
        manifest = self._manifest_snapshot(name)
        self._fault("move:before-copy")
        self.client_factory(target).receive_manifest(manifest)
        self._fault("move:after-copy")
        self.naming.add_location(name, target)
        self._fault("move:after-naming-add")
        self.naming.remove_location(name, self.endpoint)
        self._fault("move:after-naming-remove")
        with self._lock_for(name):
            self.store.delete(name)
            with self._guard:
                self._objects.pop(name, None)

    def receive_manifest(self, manifest: bytes) -> str:
        """Inter-repository transfer target: verify then persist verbatim,
        so replica digests stay byte-identical to the source."""
        obj = deserialize_object(manifest)
        name = obj.name
        with self._lock_for(name):
            if self.contains(name):
                raise AlreadyPresent(f"{name} is already at {self.endpoint}")
            self.store.save_bytes(name, manifest)
            with self._guard:
                self._objects[name] = obj
        return name


class ObjectSession:
    """Kernel operations on one object, mediated by the primitive access
    manager and persisted through the owning repository when the object has
    been deposited."""

    def __init__(self, repo: Repository, obj: DigitalObjectKernel, key: str, staged_handle=None):
        self._repo = repo
        self._obj = obj
        self._lock = repo._lock_for(key)
        self._staged_handle = staged_handle

    @property
    def object_name(self) -> str | None:
        return self._obj.name

    def _check_live(self) -> None:
        # Sessions go stale when the object is deposited, moved or deleted.
        if self._staged_handle is not None:
            with self._repo._guard:
                if self._repo._staged.get(self._staged_handle) is not self._obj:
                    raise NoSuchHandle(f"no staged object {self._staged_handle!r}")
        else:
            with self._repo._guard:
                if self._repo._objects.get(self._obj.name) is not self._obj:
                    raise NoSuchObject(f"{self._obj.name} is not contained in this repository")

    def _gate(self, op_name: str, principal: str) -> access.AccessDecision | None:
        assert op_name in PRIMITIVE_METHODS, op_name
        pam = self._obj.primitive_access_manager
        if pam is None:
            return None
        decision = access.evaluate(pam, self._repo.resolver, self._obj, op_name, principal)
        if decision.effect == access.DENY:
            raise AccessDenied(decision.reason)
        return decision

    def _persist(self) -> None:
        if self._staged_handle is None:
            self._repo.persist(self._obj)

    # -- structural -------------------------------------------------------

    def create_datastream(self, mime: str, content: bytes, principal: str = "anonymous") -> str:
        with self._lock:
            self._check_live()
            self._gate("CreateDataStream", principal)
            ds_id = self._obj.create_datastream(mime, content)
            self._persist()
            return ds_id

    def get_datastreams(self, principal: str = "anonymous"):
        with self._lock:
            self._check_live()
            self._gate("GetDataStreams", principal)
            return self._obj.get_datastreams()

    def get_datastream_content(self, ds_id: str, principal: str = "anonymous"):
        with self._lock:
            self._check_live()
            decision = self._gate("GetDataStreamContent", principal)
            mime, data = self._obj.get_datastream_content(ds_id)
            if decision is not None:
                mime, data = access.apply_transforms(decision, mime, data)
            return mime, data

    # -- gateway ------------------------------------------------------------

    def create_disseminator(
        self, kind, content_type: str, servlet: str, bindings, principal: str = "anonymous"
    ) -> str:
        with self._lock:
            self._check_live()
            self._gate("CreateDisseminator", principal)
            diss_id = self._obj.create_disseminator(
                kind, content_type, servlet, bindings, self._repo.resolver
            )
            self._persist()
            return diss_id

    def get_disseminators(self, principal: str = "anonymous"):
        with self._lock:
            self._check_live()
            self._gate("GetDisseminators", principal)
            return self._obj.get_disseminators()

    def list_disseminator_types(self, principal: str = "anonymous") -> list[str]:
        with self._lock:
            self._check_live()
            self._gate("ListDisseminatorTypes", principal)
            return self._obj.list_disseminator_types()

    def list_disseminator_methods(self, content_type: str, principal: str = "anonymous"):
        with self._lock:
            self._check_live()
            self._gate("ListDisseminatorMethods", principal)
            return self._obj.list_disseminator_methods(content_type, self._repo.resolver)

    def get_dissemination(
        self, content_type: str, method: str, args: dict, principal: str = "anonymous"
    ):
        with self._lock:
            self._check_live()
            decision = self._gate("GetDissemination", principal)
            mime, data = self._obj.get_dissemination(
                content_type, method, args, principal, self._repo.resolver
            )
            if decision is not None:
                mime, data = access.apply_transforms(decision, mime, data)
            return mime, data

    # -- access managers ------------------------------------------------------

    def set_access_manager(self, target: str, scheme: str, bindings, principal: str = "anonymous") -> str:
        with self._lock:
            self._check_live()
            self._gate("SetAccessManager", principal)
            am_id = self._obj.set_access_manager(target, scheme, bindings, self._repo.resolver)
            self._persist()
            return am_id

    def get_access_manager(self, target: str, principal: str = "anonymous"):
        with self._lock:
            self._check_live()
            self._gate("GetAccessManager", principal)
            return self._obj.get_access_manager(target)


# ---------------------------------------------------------------------------
# in-process federation plumbing


class LocalRepositoryClient:
    """Same call surface as the wire repository client, backed by a direct
    object reference; lets resolvers, transfers and bootstrap run without
    sockets."""

    def __init__(self, registry: "LocalEndpointRegistry", endpoint: str, principal: str = "anonymous"):
        self._registry = registry
        self._endpoint = endpoint
        self.principal = principal

    def _repo(self) -> Repository:
        return self._registry.lookup(self._endpoint)

    def get_dissemination(self, name, content_type, method, args, principal=None):
        return self._repo().access(name).get_dissemination(
            content_type, method, args, principal or self.principal
        )

    def receive_manifest(self, manifest: bytes) -> str:
        return self._repo().receive_manifest(manifest)

    # staging surface, mirroring the wire client

    def create_object(self) -> str:
        return self._repo().create_object()

    def add_datastream(self, handle: str, mime: str, content: bytes) -> str:
        return self._repo().staged(handle).create_datastream(mime, content, self.principal)

    def add_disseminator(self, handle, content_type, servlet=None, bindings=None, kind=None):
        from .kernel import DisseminatorKind, builtin_kind_for_urn

        resolved_kind = (
            DisseminatorKind(kind)
            if kind is not None
            else (builtin_kind_for_urn(content_type) or DisseminatorKind.CONTENT)
        )
        return self._repo().staged(handle).create_disseminator(
            resolved_kind, content_type, servlet or content_type, bindings or {}, self.principal
        )

    def set_access_manager_staged(self, handle, target, scheme, bindings):
        return self._repo().staged(handle).set_access_manager(target, scheme, bindings, self.principal)

    def deposit(self, handle: str) -> str:
        return self._repo().deposit(handle)

    # deposited-object surface, returning wire-shaped plain data

    def get_datastreams(self, name: str) -> list[dict]:
        infos = self._repo().access(name).get_datastreams(self.principal)
        return [{"id": i.id, "mime": i.mime, "length": i.length} for i in infos]

    def get_datastream_content(self, name: str, ds_id: str) -> tuple[str, bytes]:
        return self._repo().access(name).get_datastream_content(ds_id, self.principal)

    def get_disseminators(self, name: str) -> list[dict]:
        return [
            {
                "id": i.id,
                "kind": i.kind,
                "content_type": i.content_type,
                "servlet": i.servlet,
                "bindings": {sid: list(ids) for sid, ids in i.bindings.items()},
                "has_access_manager": i.has_access_manager,
            }
            for i in self._repo().access(name).get_disseminators(self.principal)
        ]

    def list_types(self, name: str) -> list[str]:
        return self._repo().access(name).list_disseminator_types(self.principal)

    def list_methods(self, name: str, type_urn: str, use_alias: bool = False) -> list[dict]:
        specs = self._repo().access(name).list_disseminator_methods(type_urn, self.principal)
        return [s.to_dict() for s in specs]

    def set_access_manager(self, name, target, scheme, bindings):
        return self._repo().access(name).set_access_manager(target, scheme, bindings, self.principal)

    def get_access_manager(self, name, target):
        info = self._repo().access(name).get_access_manager(target, self.principal)
        if info is None:
            return None
        return {
            "id": info.id,
            "scheme": info.scheme,
            "bindings": {sid: list(ids) for sid, ids in info.bindings.items()},
        }

    def delete(self, name: str) -> None:
        self._repo().delete(name)

    def replicate(self, name: str, target: str) -> None:
        self._repo().replicate(name, target)

    def move(self, name: str, target: str) -> None:
        self._repo().move(name, target)


class LocalEndpointRegistry:
    """endpoint -> Repository map with a kill switch, standing in for the
    network in in-process federations."""

    def __init__(self):
        self._repos: dict[str, Repository] = {}
        self._down: set[str] = set()

    def register(self, repo: Repository) -> None:
        self._repos[repo.endpoint] = repo

    def kill(self, endpoint: str) -> None:
        self._down.add(endpoint)

    def revive(self, endpoint: str) -> None:
        self._down.discard(endpoint)

    def lookup(self, endpoint: str) -> Repository:
        if endpoint in self._down or endpoint not in self._repos:
            raise TargetUnreachable(f"no repository is listening at {endpoint}")
        return self._repos[endpoint]

    def client(self, endpoint: str) -> LocalRepositoryClient:
        return LocalRepositoryClient(self, endpoint)
