import numpy as np
import pytest

from nnhybrid import classifiers as clf
from nnhybrid import neural as nn
from nnhybrid import serialize as S
from nnhybrid.data import synth_blobs


def _same_arrays(a, b):
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


def test_network_round_trip_is_bit_exact(tmp_path):
    ds = synth_blobs(10, 100, 3, 5.0, 0, shape=(1, 10, 10))
    net = nn.train(nn.build_architecture(2, (1, 10, 10), 3), ds, 2, seed=7)
    S.save(tmp_path / "n.dhnn", S.dump_network(net))
    back = S.load_any(tmp_path / "n.dhnn")
    assert back.spec == net.spec and back.seed == 7 and back.epochs_trained == 2
    for pa, pb in zip(net.parameters, back.parameters):
        assert (pa is None) == (pb is None)
        if pa is not None:
            assert _same_arrays(pa[0], pb[0]) and _same_arrays(pa[1], pb[1])
    for va, vb in zip(net.velocities, back.velocities):
        if va is not None:
            assert _same_arrays(va[0], vb[0])
    np.testing.assert_array_equal(back.predict_proba(ds.features), net.predict_proba(ds.features))
    assert S.dump_network(back) == S.dump_network(net)


def test_svm_round_trip():
    ds = synth_blobs(10, 3, 3, 4.0, 1)
    m = clf.svm_fit(ds.features, ds.labels, 1.0)
    back = S.load_svm(S.dump_svm(m))
    assert back.hyper == m.hyper and set(back.binaries) == set(m.binaries)
    for pair, bm in m.binaries.items():
        assert _same_arrays(bm.support_vectors, back.binaries[pair].support_vectors)
        assert _same_arrays(bm.dual_coefs, back.binaries[pair].dual_coefs)
        assert bm.bias == back.binaries[pair].bias
    np.testing.assert_array_equal(back.predict(ds.features), m.predict(ds.features))


def test_knn_round_trip():
    ds = synth_blobs(10, 3, 3, 4.0, 1)
    m = clf.knn_fit(ds.features, ds.labels, 5)
    back = S.load_knn(S.dump_knn(m))
    assert back.k == 5 and _same_arrays(back.points, m.points)
    np.testing.assert_array_equal(back.labels, m.labels)


def test_dataset_round_trip():
    ds = synth_blobs(4, 16, 2, 4.0, 3, shape=(1, 4, 4), name="blobs ü")
    back = S.load_dataset(S.dump_dataset(ds))
    assert back.name == "blobs ü" and back.class_count == 2
    assert _same_arrays(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_format_errors(tmp_path):
    blob = S.dump_knn(clf.knn_fit(np.zeros((2, 1)), [0, 1], 1))
    with pytest.raises(S.FormatError):
        S.load_network(blob)
    with pytest.raises(S.FormatError):
        S.load_knn(blob[:-3])
    with pytest.raises(S.FormatError):
        S.load_knn(blob + b"\0")
    with pytest.raises(S.FormatError):
        S.load_knn(blob[:4] + b"\x09\x00" + blob[6:])
    (tmp_path / "x").write_bytes(b"ABCD")
    with pytest.raises(S.FormatError):
        S.load_any(tmp_path / "x")
