"""Smoke test for the vsfa extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`
or `pip install crates/python`.
"""

import math

import vsfa


def main():
    drivers, x = vsfa.generate(2000, 2, [0.99, 0.95], 4, noise=0.1, seed=7)
    assert len(x) == 2000 and len(x[0]) == 4
    assert len(drivers[0]) == 2

    m = vsfa.moments(x)
    assert m["samples"] == 2000 and len(m["c_dot"]) == 4

    sfa = vsfa.sfa_fit(x, 2)
    metrics = vsfa.evaluate(sfa, x)
    assert metrics["unit_variance_violation"] < 1e-6
    assert metrics["decorrelation_violation"] < 1e-6

    model, report = vsfa.train(x, optimizer="sgd", lr=0.05, max_steps=100000, seed=1)
    assert model.kind == "linear" and model.latent_dim == 2
    assert report["converged"], report["final_grad_norm"]
    r_cond, r_offset = vsfa.stationarity_residual(model, x)
    assert r_offset < 1e-6, r_offset

    closed = vsfa.closed_form_objective(model, x)
    summed = vsfa.per_sample_objective(model, x)
    assert abs(closed - summed) <= 1e-8 * abs(closed)

    metrics = vsfa.evaluate(model, x, drivers=drivers, compare_sfa=True)
    assert max(metrics["principal_angles_deg"]) < 10.0

    est = vsfa.elbo(model, x, samples=200, seed=3)
    assert abs(est["total"] - closed) < 5 * est["reconstruction_std_error"]

    z, decoded = vsfa.sample(model, [0.0, 0.0], 5, seed=2)
    assert len(z) == 5 and len(decoded[0]) == 4

    again = vsfa.Model.from_json(model.to_json())
    assert again.features(x[:10]) == model.features(x[:10])

    try:
        vsfa.generate(100, 2, [0.9, 0.9], 4)
    except ValueError as e:
        assert "strictly decreasing" in str(e)
    else:
        raise AssertionError("expected ValueError")

    assert math.isfinite(vsfa.slowness(model.features(x))[0])
    print("python smoke test passed:", model, "angles", metrics["principal_angles_deg"])


if __name__ == "__main__":
    main()
