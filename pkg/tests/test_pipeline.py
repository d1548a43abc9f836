import os
import subprocess
import sys

import numpy as np
import pytest

from zslrac import _backend
from zslrac.embed import TrainConfig, forward, train
from zslrac.pipeline import adaptation_inputs, build_prototypes, evaluate_variant, run_adaptation


@pytest.fixture(scope="module")
def trained(small_split):
    train_ds, test_ds = small_split
    net = train(train_ds, TrainConfig(epochs=20, hidden_dim=8, learning_rate=1e-3,
                                      batch_size=8, lambda_r=1e-4)).net
    return net, test_ds


def test_adaptation_inputs_use_unseen_rows_only(trained):
    net, test = trained
    U, A, unseen, ids = adaptation_inputs(net, test)
    assert unseen == [3, 4]
    assert U.shape == (12, 4) and A.shape == (2, 4)
    assert set(test.labels[np.isin(test.sample_ids, ids)].tolist()) == {3, 4}


def test_build_prototypes_substitutes_adapted_rows(trained):
    net, test = trained
    plain = build_prototypes(net, test)
    np.testing.assert_array_equal(plain.prototypes, forward(net, test.descriptors))
    rows = np.full((2, 4), 7.0)
    p = build_prototypes(net, test, adapted=([3, 4], rows))
    np.testing.assert_array_equal(p.prototypes[3:], rows)
    np.testing.assert_array_equal(p.prototypes[:3], plain.prototypes[:3])
    assert p.seen_mask.tolist() == [True, True, True, False, False]


def test_variants_share_seen_predictions_at_gamma_one(trained):
    net, test = trained
    adaptation = run_adaptation(net, test)
    r, gen_r, _ = evaluate_variant(net, test, "R")
    ra, gen_ra, _ = evaluate_variant(net, test, "RA", adaptation=adaptation)
    assert r.config_echo["variant"] == "R" and ra.config_echo["variant"] == "RA"
    assert gen_r.pred.shape == gen_ra.pred.shape


def test_rac_accepts_tuple_adaptation(trained):
    net, test = trained
    res = run_adaptation(net, test)
    a, _, _ = evaluate_variant(net, test, "RAC", 1.3, adaptation=res)
    b, _, _ = evaluate_variant(net, test, "RAC", 1.3, adaptation=(res.class_ids, res.adapted))
    assert a.to_dict() == b.to_dict()


def test_backend_env_override():
    env = dict(os.environ, ZSLRAC_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from zslrac import BACKEND; print(BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.skipif(os.environ.get("ZSLRAC_BACKEND", "").lower() == "python",
                    reason="fallback forced")
def test_compiled_backend_is_built():
    # the editable install compiles the extension; a missing build is a packaging bug
    assert _backend.BACKEND == "cython"
