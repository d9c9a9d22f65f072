"""Smoke test for the causal_sdr extension module.

Run after `maturin develop -m crates/python/Cargo.toml`, or straight from a
cargo build: if the module is not installed, the freshly built shared
library under target/ is loaded instead.
"""

import importlib.util
import math
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import causal_sdr

        return causal_sdr
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libcausal_sdr_py.so"
        if lib.exists():
            spec = importlib.util.spec_from_file_location("causal_sdr", lib)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("causal_sdr not built: run `cargo build -p causal-sdr-py --release` first")


def main():
    sdr = load()
    assert set(sdr.METHODS) == {
        "regression",
        "noisy_reg_eval",
        "confounded_reg_eval",
        "ipw_causal",
        "aug_causal",
        "pca",
    }

    data, truth = sdr.simulate("case2-p6", "confounded", n=150, seed=3)
    assert (data.n, data.p) == (150, 6)
    assert len(truth) == 6 and len(truth[0]) == 2
    assert sdr.distance(truth, truth) < 1e-12

    # same column space, different basis
    mixed = [[r[0] + r[1], r[0] - 2 * r[1]] for r in truth]
    assert sdr.distance(truth, mixed) < 1e-10

    directions = sdr.pca(data.a, 2)
    assert len(directions) == 6

    pca_fit = sdr.fit("pca", data, truth=truth)
    assert pca_fit.converged and pca_fit.iterations == 0
    assert 0.0 <= pca_fit.distance <= 2.0

    cfg = "solver.max_iterations = 5\nsolver.restarts = 0\n"
    ipw_fit = sdr.fit("ipw_causal", data, seed=1, truth=truth, config=cfg)
    assert len(ipw_fit.beta_hat) == 6
    assert math.isfinite(ipw_fit.distance)

    m = sdr.moment(data, truth)
    assert len(m) == 8 and all(math.isfinite(v) for v in m)
    constant = sdr.Dataset([1.0] * data.n, data.a, data.c)
    assert all(v == 0.0 for v in sdr.moment(constant, truth))

    with tempfile.TemporaryDirectory() as tmp:
        path = pathlib.Path(tmp) / "data.csv"
        data.to_csv(path)
        back = sdr.Dataset.from_csv(path)
        assert back.y == data.y

        rows = sdr.bench(
            f'methods = ["pca"]\nreplications = 2\nn = 40\noutput_dir = "{tmp}/bench"\n'
        )
        assert rows[0]["method"] == "pca" and rows[0]["runs"] == 2

    try:
        sdr.fit("lasso", data)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
