"""Repository lifecycle, replication/migration, persistence, enforcement."""

from __future__ import annotations

import json
import threading

import pytest

from conftest import (
    ACL_ALICE_ALL,
    MARC_FIXTURE,
    acl_bytes,
    build_marc_object,
    make_federation,
)
from objrepo.errors import (
    AccessDenied,
    AlreadyPresent,
    NamingUnavailable,
    NoSuchHandle,
    NoSuchObject,
    NotRegistered,
    TargetUnreachable,
)
from objrepo.kernel import PRIMITIVE_TARGET, deserialize_object
from objrepo.repository import Repository, load_repository_config


class InjectedFault(Exception):
    """Stands in for a crash at a phase boundary; repositories never catch it."""


def manifest_digest(repo: Repository, name: str) -> str:
    return json.loads(repo.store.read_bytes(name))["digest"]


# -- create / deposit / access ---------------------------------------------------


def test_create_yields_empty_wrapper(federation):
    repo = federation.repos[0]
    handle = repo.create_object()
    assert repo.staged(handle).get_datastreams() == []
    other = repo.create_object()
    assert handle != other


def test_staged_objects_are_not_accessible_by_name(federation):
    repo = federation.repos[0]
    repo.create_object()
    for name in federation.naming.names():
        session = repo.access(name) if repo.contains(name) else None
        if session is not None:
            assert session.object_name == name  # only deposited objects resolve


def test_deposit_registers_sole_location(federation):
    name = build_marc_object(federation)
    assert name.startswith("urn:test:")
    assert federation.naming.resolve(name) == [federation.repos[0].endpoint]
    assert federation.repos[0].access(name).object_name == name


def test_deposit_consumes_handle(federation):
    repo = federation.repos[0]
    handle = repo.create_object()
    repo.deposit(handle)
    with pytest.raises(NoSuchHandle):
        repo.deposit(handle)
    with pytest.raises(NoSuchHandle):
        repo.staged(handle)


def test_deposit_aborts_atomically_when_naming_down(federation):
    repo = federation.repos[0]
    handle = repo.create_object()
    repo.staged(handle).create_datastream("text/plain", b"payload")
    federation.naming.down = True
    with pytest.raises(NamingUnavailable):
        repo.deposit(handle)
    session = repo.staged(handle)  # still staged, still unnamed
    assert session.object_name is None
    federation.naming.down = False
    name = repo.deposit(handle)
    assert federation.naming.resolve(name) == [repo.endpoint]


def test_deposit_rolls_back_registration_when_persist_fails(federation, monkeypatch):
    repo = federation.repos[0]
    handle = repo.create_object()

    def explode(obj):
        raise OSError("disk full")

    monkeypatch.setattr(repo.store, "save", explode)
    with pytest.raises(OSError):
        repo.deposit(handle)
    monkeypatch.undo()
    name = repo.deposit(handle)  # still staged; the retry mints a fresh name
    assert federation.naming.resolve(name) == [repo.endpoint]
    # no dangling registration from the failed attempt
    for registered in federation.naming.names():
        assert repo.contains(registered) or registered in federation.types.values()


def test_access_errors(tmp_path):
    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed, repo_index=0)
    with pytest.raises(NoSuchObject):
        fed.repos[1].access(name)  # wrong repository
    fed.repos[0].delete(name)
    with pytest.raises(NoSuchObject):
        fed.repos[0].access(name)


# -- delete -----------------------------------------------------------------------


def test_delete_sole_copy_unregisters(federation):
    name = build_marc_object(federation)
    federation.repos[0].delete(name)
    with pytest.raises(NotRegistered):
        federation.naming.resolve(name)


def test_delete_one_replica_keeps_survivor(tmp_path):
    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed)
    fed.repos[0].replicate(name, fed.repos[1].endpoint)
    fed.repos[0].delete(name)
    assert fed.naming.resolve(name) == [fed.repos[1].endpoint]
    assert fed.repos[1].access(name).object_name == name


def test_delete_unknown_and_naming_down(federation):
    repo = federation.repos[0]
    with pytest.raises(NoSuchObject):
        repo.delete("urn:test:who")
    name = build_marc_object(federation)
    federation.naming.down = True
    with pytest.raises(NamingUnavailable):
        repo.delete(name)
    federation.naming.down = False
    assert repo.access(name).object_name == name  # intact


# -- replicate ----------------------------------------------------------------------


def test_replicate_equal_digests_and_locations(tmp_path):
    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed)
    fed.repos[0].replicate(name, fed.repos[1].endpoint)
    assert manifest_digest(fed.repos[0], name) == manifest_digest(fed.repos[1], name)
    assert fed.naming.resolve(name) == [fed.repos[0].endpoint, fed.repos[1].endpoint]


def test_replicate_to_self_is_already_present(federation):
    name = build_marc_object(federation)
    with pytest.raises(AlreadyPresent):
        federation.repos[0].replicate(name, federation.repos[0].endpoint)


def test_replicate_twice_is_already_present(tmp_path):
    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed)
    fed.repos[0].replicate(name, fed.repos[1].endpoint)
    with pytest.raises(AlreadyPresent):
        fed.repos[0].replicate(name, fed.repos[1].endpoint)


def test_replicate_unreachable_target(federation):
    name = build_marc_object(federation)
    with pytest.raises(TargetUnreachable):
        federation.repos[0].replicate(name, "nobody.local:81")


def test_replicate_keeps_replica_when_naming_fails(tmp_path):
    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed)

    def drop_naming(point):
        if point == "replicate:after-transfer":
            fed.naming.down = True

    fed.repos[0].fault_hook = drop_naming
    with pytest.raises(NamingUnavailable):
        fed.repos[0].replicate(name, fed.repos[1].endpoint)
    fed.naming.down = False
    fed.repos[0].fault_hook = None
    assert fed.repos[1].contains(name)  # replica kept for the caller to retry naming
    fed.naming.add_location(name, fed.repos[1].endpoint)
    assert fed.naming.resolve(name) == [fed.repos[0].endpoint, fed.repos[1].endpoint]


def test_replicated_dissemination_is_byte_identical(tmp_path):
    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed)
    fed.repos[0].replicate(name, fed.repos[1].endpoint)
    args = {"field": "Creator"}
    got0 = fed.repos[0].access(name).get_dissemination(fed.types["type-dc"], "getDCField", args, "alice")
    got1 = fed.repos[1].access(name).get_dissemination(fed.types["type-dc"], "getDCField", args, "alice")
    assert got0 == got1


# -- move -------------------------------------------------------------------------------


def test_move_happy_path(tmp_path):
    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed)
    fed.repos[0].move(name, fed.repos[1].endpoint)
    assert fed.naming.resolve(name) == [fed.repos[1].endpoint]
    with pytest.raises(NoSuchObject):
        fed.repos[0].access(name)
    assert fed.repos[1].access(name).object_name == name


def test_move_unknown_name(federation):
    with pytest.raises(NoSuchObject):
        federation.repos[0].move("urn:test:who", "other.local:80")


@pytest.mark.parametrize(
    "point",
    ["move:before-copy", "move:after-copy", "move:after-naming-add", "move:after-naming-remove"],
)
def test_move_fault_injection_never_loses_the_object(tmp_path, point):
    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed)
    source, target = fed.repos

    def crash(p):
        if p == point:
            raise InjectedFault(p)

    source.fault_hook = crash
    with pytest.raises(InjectedFault):
        source.move(name, target.endpoint)
    source.fault_hook = None

    locations = fed.naming.resolve(name)  # still resolvable ...
    assert locations
    serving = [r for r in fed.repos if r.endpoint in locations and r.contains(name)]
    assert serving, f"no listed location serves {name} after fault at {point}"
    # ... and a listed copy still disseminates.
    mime, data = serving[0].access(name).get_dissemination(
        fed.types["type-dc"], "getDCField", {"field": "Creator"}, "alice"
    )
    assert data == b"Melville, Herman"


# -- persistence / loadStore --------------------------------------------------------------


def restart_repo(fed, index: int) -> Repository:
    old = fed.repos[index]
    reborn = Repository(old.config, fed.naming, fed.registry.client)
    fed.repos[index] = reborn
    fed.registry.register(reborn)
    return reborn


def test_restart_preserves_objects(tmp_path):
    fed = make_federation(tmp_path)
    name = build_marc_object(fed)
    reborn = restart_repo(fed, 0)
    mime, data = reborn.access(name).get_dissemination(
        fed.types["type-dc"], "getDCField", {"field": "Title"}, "alice"
    )
    assert data == b"Moby-Dick; or, The Whale"


def test_corrupt_manifest_is_quarantined_others_served(tmp_path):
    fed = make_federation(tmp_path)
    good = build_marc_object(fed)
    bad = build_marc_object(fed)
    repo = fed.repos[0]
    path = repo.store.path_for(bad)
    blob = bytearray(path.read_bytes())
    at = blob.index(b'"content_b64":"') + len(b'"content_b64":"')
    blob[at] = ord("B") if blob[at : at + 1] == b"A" else ord("A")
    path.write_bytes(bytes(blob))

    reborn = restart_repo(fed, 0)
    assert reborn.contains(good)
    assert not reborn.contains(bad)
    quarantined = list(reborn.store.quarantine_dir.iterdir())
    assert len(quarantined) == 1 and quarantined[0].name.startswith(path.name)


def test_renamed_manifest_file_is_quarantined(tmp_path):
    fed = make_federation(tmp_path)
    name = build_marc_object(fed)
    repo = fed.repos[0]
    repo.store.path_for(name).rename(repo.store.objects_dir / "urn%3Atest%3Aimposter.json")
    reborn = restart_repo(fed, 0)
    assert not reborn.contains(name)
    assert len(list(reborn.store.quarantine_dir.iterdir())) == 1


def test_empty_root_is_empty_store(tmp_path):
    fed = make_federation(tmp_path, with_types=False)
    assert fed.repos[0].names() == []


def test_mutations_on_deposited_objects_persist(federation):
    name = build_marc_object(federation)
    repo = federation.repos[0]
    repo.access(name).create_datastream("text/plain", b"appended later")
    manifest = deserialize_object(repo.store.read_bytes(name))
    assert manifest.get_datastreams()[-1].mime == "text/plain"


# -- primitive access manager ---------------------------------------------------------------


def author_acl() -> bytes:
    """Composition reserved for the author; gateway and reads open."""
    return acl_bytes(
        entries=[
            {"principal": "author", "methods": ["*"], "effect": "allow", "transforms": []},
            {
                "principal": "*",
                "methods": ["CreateDataStream", "CreateDisseminator", "SetAccessManager"],
                "effect": "deny",
                "reason": "authors-only",
            },
            {"principal": "*", "methods": ["*"], "effect": "allow", "transforms": []},
        ]
    )


def test_primitive_manager_reserves_composition_requests(federation):
    repo = federation.repos[0]
    handle = repo.create_object()
    session = repo.staged(handle)
    session.create_datastream("application/x-marc-lines", MARC_FIXTURE)
    ds_acl = session.create_datastream("application/x-fedora-acl+json", author_acl())
    session.set_access_manager(PRIMITIVE_TARGET, federation.types["acl-v1"], {"acl": [ds_acl]})
    name = repo.deposit(handle)

    session = repo.access(name)
    assert session.get_datastreams(principal="reader")  # gateway requests stay open
    with pytest.raises(AccessDenied) as err:
        session.create_datastream("text/plain", b"sneaky", principal="reader")
    assert str(err.value) == "authors-only"
    assert session.create_datastream("text/plain", b"legit", principal="author") == "DS3"


def test_primitive_manager_denies_structural_reads_when_closed(federation):
    repo = federation.repos[0]
    handle = repo.create_object()
    session = repo.staged(handle)
    ds_acl = session.create_datastream("application/x-fedora-acl+json", ACL_ALICE_ALL)
    session.set_access_manager(PRIMITIVE_TARGET, federation.types["acl-v1"], {"acl": [ds_acl]})
    name = repo.deposit(handle)
    with pytest.raises(AccessDenied):
        repo.access(name).get_datastreams(principal="mallory")
    assert repo.access(name).get_datastreams(principal="alice")


def test_primitive_manager_stamps_byte_results(federation):
    repo = federation.repos[0]
    handle = repo.create_object()
    session = repo.staged(handle)
    ds = session.create_datastream("text/plain", b"the bytes")
    stamped = acl_bytes(
        entries=[
            {
                "principal": "*",
                "methods": ["*"],
                "effect": "allow",
                "transforms": [{"op": "stamp", "text": "via-primitive"}],
            }
        ]
    )
    ds_acl = session.create_datastream("application/x-fedora-acl+json", stamped)
    session.set_access_manager(PRIMITIVE_TARGET, federation.types["acl-v1"], {"acl": [ds_acl]})
    name = repo.deposit(handle)
    mime, data = repo.access(name).get_datastream_content(ds, principal="anyone")
    assert data == b"the bytes\n--stamp:via-primitive"


# -- opacity and resolver caching -------------------------------------------------------------


def test_repository_serves_opaque_random_bytes(tmp_path):
    import random

    fed = make_federation(tmp_path, n_repos=2, with_types=False)
    rng = random.Random(11)
    repo = fed.repos[0]
    handle = repo.create_object()
    session = repo.staged(handle)
    payloads = [rng.randbytes(rng.randint(1, 4096)) for _ in range(3)]
    ids = [session.create_datastream("application/octet-stream", p) for p in payloads]
    name = repo.deposit(handle)
    repo.replicate(name, fed.repos[1].endpoint)
    for ds, payload in zip(ids, payloads):
        assert fed.repos[1].access(name).get_datastream_content(ds) == (
            "application/octet-stream", payload,
        )
    assert manifest_digest(fed.repos[0], name) == manifest_digest(fed.repos[1], name)


def test_method_listing_unresolvable_after_type_object_vanishes(tmp_path):
    from objrepo.errors import UnresolvableType

    fed = make_federation(tmp_path, n_repos=2)
    name = build_marc_object(fed, repo_index=1, acl=None)
    fed.repos[0].delete(fed.types["type-dc"])  # the signature object goes away
    fed.repos[1].resolver.flush_cache()
    with pytest.raises(UnresolvableType):
        fed.repos[1].access(name).list_disseminator_methods(fed.types["type-dc"])


def test_dissemination_survives_type_home_outage_post_warmup(tmp_path):
    fed = make_federation(tmp_path, n_repos=2)  # type objects live on repo 0
    name = build_marc_object(fed, repo_index=1, acl=None)
    session = fed.repos[1].access(name)
    warm = session.get_dissemination(fed.types["type-dc"], "getDCRecord", {})
    fed.registry.kill(fed.repos[0].endpoint)
    assert fed.repos[1].access(name).get_dissemination(fed.types["type-dc"], "getDCRecord", {}) == warm
    fed.registry.revive(fed.repos[0].endpoint)


# -- config & concurrency ---------------------------------------------------------------------


def test_load_repository_config(tmp_path):
    path = tmp_path / "repo.json"
    path.write_text(
        json.dumps(
            {
                "repo_name": "urn:test:repo-r1",
                "storage_root": str(tmp_path / "root"),
                "listen_endpoint": "127.0.0.1:0",
                "naming_endpoint": "127.0.0.1:9000",
                "urn_namespace": "test",
            }
        )
    )
    config = load_repository_config(path)
    assert config.repo_name == "urn:test:repo-r1"
    assert config.worker_limit == 8


def test_concurrent_writers_on_distinct_objects(federation):
    repo = federation.repos[0]
    names = [build_marc_object(federation) for _ in range(4)]
    errors: list[Exception] = []

    def hammer(name):
        try:
            for i in range(20):
                repo.access(name).create_datastream("text/plain", f"blob-{i}".encode())
                repo.access(name).get_datastreams()
        except Exception as exc:  # pragma: no cover - fails the test below
            errors.append(exc)

    threads = [threading.Thread(target=hammer, args=(n,)) for n in names]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    for name in names:
        infos = repo.access(name).get_datastreams()
        assert len(infos) == 2 + 20  # marc + acl + twenty appends
        assert [i.id for i in infos] == [f"DS{k}" for k in range(1, 23)]
