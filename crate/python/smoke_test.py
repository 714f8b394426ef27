"""Smoke test for the snse Python module. Run after `pip install -e crates/py`."""

import math
import pathlib
import random
import tempfile

import snse

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def main():
    basis = snse.Basis.periodic(2 * math.pi, 16)
    assert basis.dim == 16
    assert basis.eigenvalues[0] == 1.0
    assert basis.gram_deviation() < 1e-12

    rng = random.Random(0)
    u = [rng.gauss(0, 1) for _ in range(basis.dim)]
    v = [rng.gauss(0, 1) for _ in range(basis.dim)]
    assert basis.skew_ratio(u, v) < 1e-10

    cfg = snse.Config.from_file(str(CONFIGS / "torus_small.toml"))
    cfg.seed = 4
    assert cfg.seed == 4 and len(cfg.hash()) == 64

    scn_basis = cfg.basis()
    rows = cfg.check(scn_basis)
    assert all(r["pass"] for r in rows), rows

    scn = cfg.scenario(scn_basis)
    path = scn.simulate()
    assert path["completed"] and len(path["time"]) == len(path["v_sq"])
    again = scn.simulate()
    assert path["v_sq"] == again["v_sq"]

    table = scn.study("v")
    ref = [r for r in table if r["level"] == cfg.n_ref]
    assert ref and all(r["mean"] == 0.0 for r in ref)

    order = snse.scalar_strong_order([4, 5, 6, 7], n_paths=500, seed=1)
    assert 0.35 < order["slope"] < 0.65, order

    try:
        snse.Config.from_str("[physics]\nviscocity = 1.0\n")
    except snse.ConfigError as e:
        assert "viscosity" in str(e)
    else:
        raise AssertionError("typo accepted")

    with tempfile.TemporaryDirectory() as out:
        code = snse.run_cli(["basis-info", "--config", str(CONFIGS / "torus_small.toml"), "--out", out])
        assert code == 0
        assert (pathlib.Path(out) / "manifest.json").exists()

    print("smoke test ok")


if __name__ == "__main__":
    main()
