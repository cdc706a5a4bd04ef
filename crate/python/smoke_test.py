"""Exercise the Python bindings end to end.

Build first with `pip install --no-build-isolation ./crates/py`. Pass a
model file as the first argument to also check posterior sampling.
"""

import math
import sys

import hemo_py as hemo


def check_network():
    net = hemo.reference_network()
    assert net["root"] == "aorta", net["root"]
    ids = [s["id"] for s in net["segments"]]
    assert "l_brachial" in ids
    return net


def check_simulation(net):
    heart = {
        "heart_rate": 72.0,
        "stroke_volume": 7.0e-5,
        "lvet": 0.29,
        "peak_flow_time": 0.1,
        "reverse_flow_fraction": 0.05,
    }
    probes = [
        {"segment_id": "aorta", "position": 0.0, "quantity": "pressure"},
        {"segment_id": "l_brachial", "position": 1.0, "quantity": "pressure"},
    ]
    out = hemo.simulate(heart, probes, network=net)
    assert out["converged"]
    assert out["relative_mass_drift"] < 1e-8, out["relative_mass_drift"]
    aortic = out["last_beat"][0]
    sbp, dbp = max(aortic) / 133.322, min(aortic) / 133.322
    assert 60 < sbp < 250 and 20 < dbp < sbp, (sbp, dbp)
    print(f"simulate: {out['beats_simulated']} beats, aortic {sbp:.0f}/{dbp:.0f} mmHg")

    try:
        hemo.simulate(heart, [{"segment_id": "nowhere", "position": 0.0, "quantity": "pressure"}])
    except hemo.HemoException as e:
        assert str(e).split(":")[0] in {"solver", "vascular_model", "io"}, e
    else:
        raise AssertionError("unknown segment accepted")


def check_population():
    a = hemo.sample_subject(3, 42)
    b = hemo.sample_subject(3, 42)
    assert a == b
    assert 40 <= a["heart_rate"] <= 120
    print(f"sample_subject: HR {a['heart_rate']:.1f} bpm, age {a['age']:.0f}")


def check_signal():
    fs = 125.0
    x = [math.sin(2 * math.pi * 2.0 * t / fs) + 3.0 for t in range(1000)]
    y = hemo.bandpass(x)
    mean = sum(y[200:800]) / 600
    assert abs(mean) < 0.05, mean
    peak = max(abs(v) for v in y[200:800])
    assert abs(peak - 1.0) < 0.05, peak


def check_metrics():
    assert abs(hemo.mi_bound(1.0, 100, 100) - math.log2(100)) < 1e-12
    assert abs(hemo.spearman([1, 2, 3, 4], [10, 20, 30, 40]) - 1.0) < 1e-12
    uniform = [(i + 0.5) / 1000 for i in range(1000)]
    assert hemo.acauc(uniform) < 0.01
    cells, width = hemo.sci([[0.5] * 10], 0.95, 0.0, 1.0)
    assert cells == 1.0 and abs(width - 0.01) < 1e-12, (cells, width)


def check_posterior(path):
    post = hemo.Posterior.load(path)
    segment = [math.sin(0.05 * t) for t in range(post.input_len)]
    draws = post.sample(segment, 50.0, n=500, seed=1)
    assert len(draws) == 500 and len(draws[0]) == 4
    assert draws == post.sample(segment, 50.0, n=500, seed=1)
    lp = post.log_density(draws[0], segment, 50.0)
    assert math.isfinite(lp)
    print(f"{post!r}: mean HR {sum(d[0] for d in draws) / len(draws):.1f} bpm")


def main():
    print(f"hemo_py {hemo.__version__}")
    net = check_network()
    check_simulation(net)
    check_population()
    check_signal()
    check_metrics()
    if len(sys.argv) > 1:
        check_posterior(sys.argv[1])
    print("smoke test passed")


if __name__ == "__main__":
    main()
