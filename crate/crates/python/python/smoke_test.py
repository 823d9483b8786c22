"""Smoke test for the esk extension module: python python/smoke_test.py"""

import math
import os
import tempfile

import esk


def main():
    sr = 16000
    tone = [0.0] * 8000 + [0.5 * math.sin(2 * math.pi * 440 * i / sr) for i in range(8000)]
    flags = esk.vad_flags(tone, sr)
    assert not any(flags[:16]) and all(flags[17:]), flags
    assert len(esk.apply_vad(tone, sr)) < len(tone)

    frames = esk.mfcc(tone, sr, n_mfcc=13)
    assert len(frames) == 98 and len(frames[0]) == 13

    net = esk.NetModel("test", embed_dim=8, n_classes=3, seed=1)
    emb = net.embed(frames)
    assert len(emb) == 8 and all(v >= 0 for v in emb)
    assert 0 <= net.predict(frames) < 3

    x = [[0.0, 0.0], [1.0, 1.0], [0.0, 0.1], [1.0, 0.9]]
    svm = esk.SvmModel.train(x, [0, 1, 0, 1], 2)
    assert [svm.predict(v)[0] for v in x] == [0, 1, 0, 1]

    assert esk.uar([0, 1, 1], [0, 0, 1], 2) == 0.75
    report = esk.evaluate([0, 1, 1], [0, 0, 1], 2)
    assert report["confusion"] == [[1, 0], [1, 1]]
    assert esk.late_fuse_vote([2, 0, 1]) == 2

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.eskm")
        net.save(path)
        assert esk.NetModel.load(path).embed(frames) == emb
        esk.synth_dataset(os.path.join(d, "data"), n_per_class=6, duration_s=0.4, seed=2)
        cfg = os.path.join(d, "cfg.txt")
        with open(cfg, "w") as f:
            f.write("manifest = data/manifest.csv\noutput_dir = out\nnet.preset = test\n"
                    "net.embed_dim = 8\nfinetune.max_epochs = 2\n")
        first = esk.run_pipeline(cfg)
        assert 0.0 <= first["uar"] <= 1.0
        assert esk.run_pipeline(cfg)["ran"] == []
        try:
            esk.NetModel.load(os.path.join(d, "missing.eskm"))
        except OSError:
            pass
        else:
            raise AssertionError("missing model file did not raise")

    print("esk smoke test passed")


if __name__ == "__main__":
    main()
