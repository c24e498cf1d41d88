#!/usr/bin/env python3
"""Smoke test for the adanorm_py extension module.

Build the module first:

    cargo build -p adanorm-py --release --features extension-module

then run this script with the stock interpreter:

    python3 python/smoke_test.py

It locates the built cdylib under target/, imports it, and checks the layer
arithmetic, the metrics (against scikit-learn when available), and a tiny
end-to-end training run for determinism.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def import_module():
    """Copies the built cdylib to an importable name and imports it."""
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libadanorm_py.so", "adanorm_py.so", "libadanorm_py.dylib")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "adanorm_py cdylib not found; run "
            "`cargo build -p adanorm-py --release --features extension-module` first"
        )
    stage = Path(tempfile.mkdtemp(prefix="adanorm_py_"))
    shutil.copy2(built, stage / "adanorm_py.so")
    sys.path.insert(0, str(stage))
    import adanorm_py

    return adanorm_py


def check(name, ok, detail=""):
    status = "ok" if ok else "FAILED"
    print(f"{name}: {status}{(' — ' + detail) if detail else ''}")
    if not ok:
        sys.exit(1)


def main():
    m = import_module()
    check("import", hasattr(m, "__version__"), f"version {m.__version__}")

    # The layer at identity weights must match per-window standardization.
    window = [[float(i * 3 + k) * 1.7 - 5.0 for k in range(3)] for i in range(8)]
    window[3][1] = 42.0
    dain = m.Dain(3, seed=0)
    got = dain.forward(window, mode="shift_scale")
    want = m.instance_normalize(window)
    diff = max(
        abs(a - b) for ra, rb in zip(got, want) for a, b in zip(ra, rb)
    )
    check("dain shift_scale == instance norm", diff == 0.0, f"max diff {diff}")

    names = set(dain.param_names())
    check(
        "layer parameters",
        {"dain.w_a", "dain.w_b", "dain.w_c", "dain.d_bias"} <= names,
        ", ".join(sorted(names)),
    )
    shape, values = dain.param("dain.w_a")
    eye = [1.0 if i % 4 == 0 else 0.0 for i in range(9)]
    check("w_a starts at identity", shape == [3, 3] and values == eye)

    # Full mode keeps shape and stays finite.
    full = dain.forward(window, mode="full")
    check(
        "full mode output",
        len(full) == 8
        and len(full[0]) == 3
        and all(math.isfinite(v) for row in full for v in row),
    )

    # Fixed-statistics standardization round trip.
    mu, sigma = m.zscore_fit(window)
    z = m.zscore_apply(window, mu, sigma)
    col0 = [row[0] for row in z]
    mean0 = sum(col0) / len(col0)
    check("zscore fit/apply", abs(mean0) < 1e-12, f"column mean {mean0:.2e}")

    # Direction labels: clear up-move, flat, clear down-move.
    up = m.label_midprice([100.0, 110.0, 110.0], 0, 2, 0.01)
    flat = m.label_midprice([100.0, 100.0, 100.0], 0, 2, 0.01)
    down = m.label_midprice([100.0, 90.0, 90.0], 0, 2, 0.01)
    check("direction labels", (up, flat, down) == (0, 1, 2), f"{(up, flat, down)}")

    # Metrics against scikit-learn on a random-ish labeling.
    truth = [i % 3 for i in range(60)]
    pred = [(t + (1 if i % 4 == 0 else 0)) % 3 for i, t in enumerate(truth)]
    rep = m.metrics(truth, pred, 3)
    try:
        from sklearn.metrics import cohen_kappa_score, f1_score

        want_kappa = cohen_kappa_score(truth, pred)
        want_f1 = f1_score(truth, pred, average="macro")
        ok = (
            abs(rep["kappa"] - want_kappa) < 1e-12
            and abs(rep["macro_f1"] - want_f1) < 1e-12
        )
        check(
            "metrics vs scikit-learn",
            ok,
            f"kappa {rep['kappa']:.6f} vs {want_kappa:.6f}",
        )
    except ImportError:
        check(
            "metrics ranges",
            0.0 <= rep["accuracy"] <= 1.0 and -1.0 <= rep["kappa"] <= 1.0,
            "scikit-learn unavailable; range check only",
        )

    # Gradient check for one model/mode pair.
    g = m.gradcheck(model="mlp", mode="full", seed=1)
    check(
        "gradcheck mlp/full",
        g["passed"] and g["max_rel_err"] < g["tol"],
        f"max rel err {g['max_rel_err']:.3e}",
    )

    # Tiny end-to-end run, twice, into separate dirs: identical metrics.
    with tempfile.TemporaryDirectory() as tmp:
        ini = """
[dataset]
source = synthetic
rows_per_day = 120
theta = 0.004
[model]
kind = mlp
hidden = 16
[training]
epochs = 1
batch = 32
seed = 3
[output]
dir = {out}
"""
        a = m.run_experiment(ini.format(out=f"{tmp}/a"))
        b = m.run_experiment(ini.format(out=f"{tmp}/b"))
        check(
            "training determinism",
            a["accuracy_mean"] == b["accuracy_mean"]
            and a["kappa_mean"] == b["kappa_mean"],
            f"accuracy {a['accuracy_mean']:.4f}, kappa {a['kappa_mean']:.4f}",
        )

        ckpt = Path(a["output_dir"]) / "fold_0" / "checkpoint.json"
        ev = m.evaluate_checkpoint(ini.format(out=f"{tmp}/a"), str(ckpt), shift=3.0)
        check(
            "evaluate matches training",
            ev["clean"]["accuracy"] == a["folds"][0]["accuracy"]
            and ev["shifted"] is not None,
            f"clean {ev['clean']['accuracy']:.4f}, "
            f"shifted {ev['shifted']['accuracy']:.4f}",
        )

        files = m.synth_dataset(f"{tmp}/data", rows_per_day=60, seed=7, shift_mult=3.0)
        check(
            "synth emission",
            len(files) == 4 and all(Path(f).exists() for f in files),
            f"{len(files)} files",
        )

    # Config mistakes surface as ValueError.
    try:
        m.run_experiment("[dataset]\nsource = csv\n")
        check("config errors raise ValueError", False)
    except ValueError:
        check("config errors raise ValueError", True)

    print("all smoke tests passed")


if __name__ == "__main__":
    main()
