"""Smoke test for the pycausebench extension.

Build it first with `pip install --no-build-isolation -e crates/python`.
"""

import json
import math
import os
import random
import tempfile

import pycausebench as cb


def synthetic(n, seed):
    rng = random.Random(seed)
    w, t, y, mu0, mu1 = [], [], [], [], []
    for _ in range(n):
        a, b = rng.gauss(0, 1), rng.gauss(0, 1)
        e = 1 / (1 + math.exp(-(0.8 * a - 0.5 * b)))
        ti = 1.0 if rng.random() < e else 0.0
        m0, m1 = a - 0.5 * b, a - 0.5 * b + 2.0
        w.append([a, b])
        t.append(ti)
        y.append((m1 if ti else m0) + rng.gauss(0, 1))
        mu0.append(m0)
        mu1.append(m1)
    return cb.Dataset(w, t, y, mu0=mu0, mu1=mu1)


def main():
    data = synthetic(400, 1)
    assert data.n == 400 and data.d == 2

    config = json.dumps({
        "max_epochs": 20,
        "gate_permutations": 19,
        "grid": [{"hidden_layers": 1, "width": 8, "activation": "elu"}],
    })
    model = cb.Model.fit(data, config=config, seed=3, allow_unrealistic=True)
    print(model)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        model.save(path)
        again = cb.Model.load(path)
        assert again.to_json() == model.to_json()

        csv = os.path.join(tmp, "data.csv")
        data.to_csv(csv)
        assert cb.Dataset.read_csv(csv).n == data.n

    a = model.sample(300, seed=7)
    b = model.sample(300, seed=7)
    assert a.y == b.y and a.t == b.t

    truth = model.ground_truth(a.w)
    shifted = model.with_knobs(effect_delta=1.5).ground_truth(a.w)
    assert abs(shifted["ate"] - truth["ate"] - 1.5) < 1e-9
    flat = model.with_knobs(positivity_alpha=0.0).propensities(a.w)
    assert all(p == 0.5 for p in flat)

    report = cb.two_sample_test([[v] for v in a.y], [[v] for v in data.y[:300]], "energy", permutations=99, seed=1)
    assert 0 < report["p_value"] <= 1
    ks = cb.two_sample_test([[v] for v in a.y], [[v] for v in b.y], "ks")
    assert ks["p_value"] == 1.0

    fid = cb.fidelity(model, data, permutations=49, seed=2, tests=["ks:y", "energy:ty"])
    assert len(fid["rows"]) == 2 and fid["effects"] is not None

    est = cb.estimate("gcom/ols", a)
    assert len(est["iate"]) == a.n
    ipw = cb.estimate("ipw/oracle?trim=true", a, propensity=truth["propensity"])
    assert math.isfinite(ipw["ate"])

    table = cb.benchmark(model, ["com/ols", "ipw/logistic_l2?trim=true"], replications=5, samples=150, seed=0)
    for row in table:
        assert abs(row["rmse"] ** 2 - row["bias"] ** 2 - row["std"] ** 2) < 1e-9

    m = cb.ate_metrics([4.1908], [4.0161])
    assert abs(m["abs_bias"] - 0.1747) < 1e-12
    assert cb.pehe([1.0, 2.0], [1.0, 2.0]) == 0.0

    try:
        cb.estimate("com/svm", a)
    except cb.CausebenchError as e:
        assert e.args[0] == "unknown_estimator", e.args
    else:
        raise AssertionError("unknown estimator accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
