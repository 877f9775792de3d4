import math
import sys
import tempfile
from pathlib import Path

import latentaug


def main():
    z = latentaug.interpolate([1.0, 2.0], [3.0, 4.0], 0.25)
    assert all(math.isclose(a, b) for a, b in zip(z, [2.5, 3.5])), z
    try:
        latentaug.interpolate([0.0], [1.0], 1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("alpha outside [0, 1] was accepted")

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "data"
        out = Path(tmp) / "out"
        counts = latentaug.gen_toy(str(root), counts=[12, 14, 20], seed=7)
        assert counts == [12, 14, 20], counts

        cfg = latentaug.RunConfig({
            "seed": 7,
            "data_root": str(root),
            "out_dir": str(out),
            "vae_epochs": 3,
            "vae_hidden": [32],
            "vae_latent_dim": 4,
            "clf_epochs": 3,
            "synthetic_per_class": 5,
        })
        rows = latentaug.run_experiment(cfg)
        names = [r["config"] for r in rows]
        assert names == ["real_noaug", "real_aug", "real_gen_noaug", "real_gen_aug"], names
        for r in rows:
            assert 0.0 <= r["overall_acc"] <= 100.0
            assert len(r["class_acc"]) == 3

        vae = latentaug.VaeModel.load(str(out / "vae" / "class_0.ckpt"))
        assert vae.latent_dim == 4
        image = [0.5] * vae.pixels
        mu, logvar = vae.encode([image])
        decoded = vae.decode(mu)
        assert len(decoded[0]) == vae.pixels
        assert all(0.0 <= p <= 1.0 for p in decoded[0])

        clf = latentaug.ClassifierModel.load(str(out / "clf" / "real_noaug.ckpt"))
        probs = clf.predict([image])
        assert math.isclose(sum(probs[0]), 1.0, rel_tol=1e-9)

        reloaded = latentaug.RunConfig.load(str(out / "resolved_config.json"))
        assert reloaded.seed == 7

    print("python smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
