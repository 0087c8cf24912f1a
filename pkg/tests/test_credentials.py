import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nomadsim.credentials import (
    DEFAULT_MAX_TOKEN_LIFETIME,
    CredentialStore,
    ProxyToken,
)
from nomadsim.errors import (
    CredentialExpiredError,
    CredentialRevokedError,
    TransportError,
    UnknownCredentialError,
    WrongPasswordError,
)
from nomadsim.fabric import SimClock


@pytest.fixture
def clock():
    return SimClock()


@pytest.fixture
def store(clock):
    return CredentialStore(clock=clock, name="primary")


WEEK = 7 * 24 * 3600.0


class TestStoreCredential:
    def test_digest_verifies_only_the_right_password(self, store):
        cred = store.store_credential("pw", WEEK)
        assert store.issue_proxy(cred, "pw", 60.0)
        with pytest.raises(WrongPasswordError):
            store.issue_proxy(cred, "pwx", 60.0)

    def test_same_password_distinct_ids_and_salts(self, store):
        a = store.store_credential("pw", WEEK)
        b = store.store_credential("pw", WEEK)
        assert a != b
        assert store._creds[a].salt != store._creds[b].salt
        assert store._creds[a].password_digest != store._creds[b].password_digest

    def test_zero_lifetime_rejected(self, store):
        with pytest.raises(ValueError):
            store.store_credential("pw", 0.0)

    def test_no_plaintext_at_rest(self, store):
        password = "swordfish-9000"
        store.store_credential(password, WEEK)
        store.store_credential("another-secret", WEEK)
        blob = store.serialize_state()
        assert password.encode() not in blob
        assert b"another-secret" not in blob


class TestIssueProxy:
    def test_token_lifetime(self, store, clock):
        cred = store.store_credential("pw", WEEK)
        token = store.issue_proxy(cred, "pw", 7200.0)
        assert token.issued_at == clock.now
        assert token.expires_at == clock.now + 7200.0

    def test_revoked_credential_refuses(self, store):
        cred = store.store_credential("pw", WEEK)
        store.revoke(cred)
        with pytest.raises(CredentialRevokedError):
            store.issue_proxy(cred, "pw", 60.0)

    def test_capped_at_credential_expiry(self, store, clock):
        cred = store.store_credential("pw", 100.0)
        token = store.issue_proxy(cred, "pw", 7200.0)
        assert token.expires_at == clock.now + 100.0

    def test_over_maximum_rejected(self, store):
        cred = store.store_credential("pw", WEEK)
        with pytest.raises(ValueError):
            store.issue_proxy(cred, "pw", DEFAULT_MAX_TOKEN_LIFETIME + 1.0)

    def test_expired_credential(self, store, clock):
        cred = store.store_credential("pw", 10.0)
        clock.advance(11.0)
        with pytest.raises(CredentialExpiredError):
            store.issue_proxy(cred, "pw", 5.0)

    def test_unknown_credential(self, store):
        with pytest.raises(UnknownCredentialError):
            store.issue_proxy("nope", "pw", 5.0)


class TestRevoke:
    def test_cascades_to_issued_tokens(self, store):
        cred = store.store_credential("pw", WEEK)
        token = store.issue_proxy(cred, "pw", 3600.0)
        assert store.validate(token).valid
        store.revoke(cred)
        verdict = store.validate(token)
        assert not verdict.valid
        assert verdict.reason == "revoked"

    def test_idempotent(self, store):
        cred = store.store_credential("pw", WEEK)
        store.revoke(cred)
        store.revoke(cred)  # no error
        assert store._creds[cred].revoked

    def test_unknown_id(self, store):
        with pytest.raises(UnknownCredentialError):
            store.revoke("nope")

    def test_never_unrevokes(self, store):
        cred = store.store_credential("pw", WEEK)
        store.revoke(cred)
        with pytest.raises(CredentialRevokedError):
            store.renew(cred, "pw", WEEK)
        assert store._creds[cred].revoked


class TestRenew:
    def test_extends_expiry(self, store, clock):
        cred = store.store_credential("pw", 100.0)
        clock.advance(50.0)
        store.renew(cred, "pw", 1000.0)
        clock.advance(200.0)  # past the original expiry
        assert store.issue_proxy(cred, "pw", 60.0)

    def test_wrong_password(self, store):
        cred = store.store_credential("pw", WEEK)
        with pytest.raises(WrongPasswordError):
            store.renew(cred, "nope", WEEK)

    def test_revoked(self, store):
        cred = store.store_credential("pw", WEEK)
        store.revoke(cred)
        with pytest.raises(CredentialRevokedError):
            store.renew(cred, "pw", WEEK)


class TestReplicate:
    def test_issue_against_replica(self, store, clock):
        other = CredentialStore(clock=clock, name="secondary")
        cred = store.store_credential("pw", WEEK)
        store.replicate(cred, other)
        token = other.issue_proxy(cred, "pw", 60.0)
        assert token.credential_id == cred

    def test_revocation_propagates_on_sync(self, store, clock):
        other = CredentialStore(clock=clock, name="secondary")
        cred = store.store_credential("pw", WEEK)
        store.replicate(cred, other)
        store.revoke(cred)
        store.sync(other)
        with pytest.raises(CredentialRevokedError):
            other.issue_proxy(cred, "pw", 60.0)

    def test_reverse_propagation(self, store, clock):
        other = CredentialStore(clock=clock, name="secondary")
        cred = store.store_credential("pw", WEEK)
        store.replicate(cred, other)
        other.revoke(cred)
        store.sync(other)
        with pytest.raises(CredentialRevokedError):
            store.issue_proxy(cred, "pw", 60.0)

    def test_unreachable_target(self, store, clock):
        other = CredentialStore(clock=clock, name="secondary")
        other.reachable = False
        cred = store.store_credential("pw", WEEK)
        with pytest.raises(TransportError):
            store.replicate(cred, other)
        # Source unchanged and still usable.
        assert store.issue_proxy(cred, "pw", 60.0)


class TestValidate:
    def test_fresh_token_valid(self, store):
        cred = store.store_credential("pw", WEEK)
        token = store.issue_proxy(cred, "pw", 3600.0)
        assert store.validate(token).valid

    def test_boundary_is_exclusive(self, store):
        cred = store.store_credential("pw", WEEK)
        token = store.issue_proxy(cred, "pw", 3600.0)
        verdict = store.validate(token, now=token.expires_at)
        assert not verdict.valid
        assert verdict.reason == "expired"
        assert store.validate(token, now=token.expires_at - 1e-9).valid

    def test_unknown_backing_credential(self, store):
        token = ProxyToken("t", "ghost", 0.0, 100.0)
        assert store.validate(token).reason == "unknown-credential"

    def test_missing_token(self, store):
        assert store.validate(None).reason == "missing"


class TestScheduledRevocation:
    def test_takes_effect_at_time(self, store, clock):
        cred = store.store_credential("pw", WEEK)
        token = store.issue_proxy(cred, "pw", 7200.0)
        store.revoke_at(cred, 100.0)
        assert store.validate(token, now=99.0).valid
        assert not store.validate(token, now=100.0).valid
        # And it is sticky afterwards.
        assert not store.validate(token, now=50.0).valid


class TestLifecycleProperties:
    @settings(max_examples=150, deadline=None)
    @given(
        lifetime=st.floats(min_value=1.0, max_value=1000.0),
        token_life=st.floats(min_value=1.0, max_value=DEFAULT_MAX_TOKEN_LIFETIME),
        probe=st.floats(min_value=0.0, max_value=4000.0),
        revoke_at=st.one_of(st.none(), st.floats(min_value=0.0, max_value=2000.0)),
    )
    def test_token_never_valid_when_it_should_not_be(
        self, lifetime, token_life, probe, revoke_at
    ):
        store = CredentialStore(name="prop")
        cred = store.store_credential("pw", lifetime)
        token = store.issue_proxy(cred, "pw", token_life)
        if revoke_at is not None:
            store.revoke_at(cred, revoke_at)
        verdict = store.validate(token, now=probe)
        expect = probe < min(token_life, lifetime) and (
            revoke_at is None or probe < revoke_at
        )
        assert verdict.valid == expect

    @settings(max_examples=100, deadline=None)
    @given(data=st.data())
    def test_no_sequence_revives_a_revoked_credential(self, data):
        store = CredentialStore(name="prop2")
        clock = store.clock
        cred = store.store_credential("pw", 1e6)
        store.revoke(cred)
        ops = data.draw(
            st.lists(
                st.sampled_from(["issue", "renew", "replicate", "sync", "advance"]),
                max_size=8,
            )
        )
        other = CredentialStore(clock=clock, name="prop2b")
        for op in ops:
            if op == "issue":
                with pytest.raises(CredentialRevokedError):
                    store.issue_proxy(cred, "pw", 60.0)
            elif op == "renew":
                with pytest.raises(CredentialRevokedError):
                    store.renew(cred, "pw", 100.0)
            elif op == "replicate":
                store.replicate(cred, other)
            elif op == "sync":
                if cred in other._creds:
                    store.sync(other)
            else:
                clock.advance(10.0)
        assert store._creds[cred].revoked
