"""Container format: round trips, integrity, versioning."""

import numpy as np
import pytest

from tabcf import persist
from tabcf import training as tr
from tabcf.dataio import ClusterIndex, encode_dataset, fit_preprocessor, \
    generate_synthetic
from tabcf.flow import DensityThresholds, Flow
from tabcf.hypernet import HyperNet


@pytest.fixture(scope="module")
def bundle():
    """A small trained-shape bundle with randomized (not all-zero) weights."""
    table = generate_synthetic("blobs", n=60, noise=0.6, seed=2)
    prep = fit_preprocessor(table)
    ds = encode_dataset(table, prep)
    rng = np.random.default_rng(3)
    net = HyperNet(prep.encoded_dim, 3, seed=7, hidden=24, n_blocks=2,
                   dropout_rate=0.25)
    flow = Flow(prep.encoded_dim, 3, seed=8, n_layers=4, hidden=8)
    for p in net.parameters() + flow.parameters():
        p.data += rng.normal(scale=0.05, size=p.data.shape)
    config = tr.TrainConfig(seed=7, hidden=24, n_blocks=2, flow_layers=4,
                            flow_hidden=8)
    thresholds = DensityThresholds(-2.25, np.array([-2.5, -2.0, -2.25]))
    clusters = ClusterIndex({c: rng.normal(size=(3, prep.encoded_dim))
                             for c in range(3)})
    return tr.ModelBundle(schema=ds.schema, prep=prep, net=net, flow=flow,
                          thresholds=thresholds, config=config,
                          pretrain_accuracy=0.9, clusters=clusters)


@pytest.fixture()
def saved(bundle, tmp_path):
    path = tmp_path / "model.hcx"
    manifest = persist.save_bundle(bundle, path)
    return bundle, path, manifest


def test_round_trip_bitwise_arrays(saved):
    bundle, path, _ = saved
    loaded = persist.load_bundle(path)
    orig = dict(bundle.net.state_arrays())
    new = dict(loaded.net.state_arrays())
    assert orig.keys() == new.keys()
    for name in orig:
        assert np.array_equal(orig[name], new[name]), name
    for (n1, a1), (n2, a2) in zip(bundle.flow.state_arrays(),
                                  loaded.flow.state_arrays()):
        assert n1 == n2 and np.array_equal(a1, a2)
    assert loaded.thresholds.global_threshold == bundle.thresholds.global_threshold
    assert np.array_equal(loaded.thresholds.per_class,
                          bundle.thresholds.per_class)
    for c in bundle.clusters.classes():
        assert np.array_equal(loaded.clusters.centers[c],
                              bundle.clusters.centers[c])


def test_round_trip_identical_predictions_and_densities(saved):
    bundle, path, _ = saved
    loaded = persist.load_bundle(path)
    probe = np.random.default_rng(0).normal(size=(16, bundle.prep.encoded_dim))
    assert np.array_equal(bundle.net.predict_proba(probe),
                          loaded.net.predict_proba(probe))
    y = np.random.default_rng(1).integers(0, 3, size=16)
    assert np.array_equal(bundle.flow.log_prob(probe, y),
                          loaded.flow.log_prob(probe, y))


def test_round_trip_preserves_schema_prep_config(saved):
    bundle, path, _ = saved
    loaded = persist.load_bundle(path)
    assert loaded.schema == bundle.schema
    assert loaded.prep.numeric_state() == bundle.prep.numeric_state()
    assert loaded.config == bundle.config
    assert loaded.pretrain_accuracy == bundle.pretrain_accuracy
    rows = [{name: 0.0 for name in bundle.schema.feature_names}]
    assert np.array_equal(loaded.prep.transform_rows(rows),
                          bundle.prep.transform_rows(rows))


def test_manifest_matches_hash_model(saved):
    bundle, _, manifest = saved
    assert manifest["hash"] == persist.hash_model(bundle)
    assert manifest["version"] == persist.FORMAT_VERSION


def test_hash_sensitivity_one_ulp(bundle, tmp_path):
    before = persist.hash_model(bundle)
    arrs = dict(bundle.net.state_arrays())
    name = sorted(arrs)[0]
    target = arrs[name]
    old = target.flat[0]
    target.flat[0] = np.nextafter(old, np.inf)
    try:
        assert persist.hash_model(bundle) != before
    finally:
        target.flat[0] = old
    assert persist.hash_model(bundle) == before


def test_hash_path_independent(bundle, tmp_path):
    h = persist.hash_model(bundle)
    m1 = persist.save_bundle(bundle, tmp_path / "a.hcx")
    m2 = persist.save_bundle(bundle, tmp_path / "sub.hcx")
    assert m1["hash"] == m2["hash"] == h
    l1 = persist.load_bundle(tmp_path / "a.hcx")
    l2 = persist.load_bundle(tmp_path / "sub.hcx")
    assert persist.hash_model(l1) == persist.hash_model(l2) == h


def test_tampered_header_rejected(saved, tmp_path):
    _, path, _ = saved
    blob = bytearray(path.read_bytes())
    idx = blob.find(b'"pretrain_accuracy"')
    assert idx > 0
    # flip a digit inside the header without changing its length
    digit = blob.find(b"0.9", idx)
    blob[digit + 2:digit + 3] = b"8"
    bad = tmp_path / "tampered.hcx"
    bad.write_bytes(bytes(blob))
    with pytest.raises(persist.PersistError, match="hash mismatch"):
        persist.load_bundle(bad)


def test_tampered_payload_rejected(saved, tmp_path):
    _, path, _ = saved
    blob = bytearray(path.read_bytes())
    blob[-5] ^= 0xFF
    bad = tmp_path / "tampered2.hcx"
    bad.write_bytes(bytes(blob))
    with pytest.raises(persist.PersistError, match="hash mismatch"):
        persist.load_bundle(bad)


def test_version_bump_rejected_before_hashing(saved, tmp_path):
    _, path, _ = saved
    blob = path.read_bytes()
    nl = blob.find(b"\n")
    line = blob[:nl].decode().split()
    line[1] = "99"
    bad = tmp_path / "future.hcx"
    bad.write_bytes((" ".join(line) + "\n").encode() + blob[nl + 1:])
    with pytest.raises(persist.PersistError, match="version 99"):
        persist.load_bundle(bad)


def test_truncated_file_clean_failure(saved, tmp_path):
    _, path, _ = saved
    blob = path.read_bytes()
    bad = tmp_path / "cut.hcx"
    bad.write_bytes(blob[: len(blob) - 257])
    with pytest.raises(persist.PersistError, match="truncated"):
        persist.load_bundle(bad)
    bad.write_bytes(blob[:10])
    with pytest.raises(persist.PersistError):
        persist.load_bundle(bad)


def test_not_a_container_rejected(tmp_path):
    junk = tmp_path / "junk.hcx"
    junk.write_bytes(b"PNG\x89 something entirely different")
    with pytest.raises(persist.PersistError, match="magic|container"):
        persist.load_bundle(junk)
    with pytest.raises(persist.PersistError, match="cannot read"):
        persist.load_bundle(tmp_path / "missing.hcx")


def test_load_twice_equal_hashes(saved):
    _, path, _ = saved
    l1 = persist.load_bundle(path)
    l2 = persist.load_bundle(path)
    assert persist.hash_model(l1) == persist.hash_model(l2)


def test_bundle_without_clusters(bundle, tmp_path):
    slim = tr.ModelBundle(schema=bundle.schema, prep=bundle.prep,
                          net=bundle.net, flow=bundle.flow,
                          thresholds=bundle.thresholds, config=bundle.config,
                          pretrain_accuracy=bundle.pretrain_accuracy,
                          clusters=None)
    path = tmp_path / "slim.hcx"
    persist.save_bundle(slim, path)
    loaded = persist.load_bundle(path)
    assert loaded.clusters is None
