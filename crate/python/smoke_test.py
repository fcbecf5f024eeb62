"""Smoke test for the segpr Python extension.

Build first:
    cargo build --release -p segpr-python --features extension-module
then run:
    python3 python/smoke_test.py [path/to/libsegpr_py.so]
"""

import importlib.machinery
import importlib.util
import math
import os
import sys
import tempfile

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_LIB = os.path.join(HERE, "..", "target", "release", "libsegpr_py.so")


def load(path):
    loader = importlib.machinery.ExtensionFileLoader("segpr", path)
    spec = importlib.util.spec_from_file_location("segpr", path, loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    segpr = load(sys.argv[1] if len(sys.argv) > 1 else DEFAULT_LIB)

    assert segpr.words_to_tags(["养老金", "调整"]) == "BMEBE"
    assert segpr.tags_to_words("养老金调整", "BMEBE") == ["养老金", "调整"]

    q = segpr.q_tilde([math.log(2.0), 0.0])
    assert abs(q[0] - 2.0 / 3.0) < 1e-12 and abs(sum(q) - 1.0) < 1e-12

    zeros = [[0.0] * 4 for _ in range(3)]
    tags, score = segpr.viterbi(zeros, [[0.0] * 4 for _ in range(4)], constrained=False)
    assert tags == "BBB" and score == 0.0
    assert abs(segpr.log_partition(zeros, [[0.0] * 4 for _ in range(4)]) - 3 * math.log(4)) < 1e-12

    scores = segpr.evaluate(["养老金 调整"], ["养 老金 调整"])
    assert abs(scores["F"] - 0.4) < 1e-12

    data = segpr.synthesize(3, labeled=40, unlabeled=60, test=20)
    config = {
        "encoder.embedding_dim": "12",
        "encoder.kernels_per_size": "6",
        "train.epochs": "5",
        "pr.iterations": "1",
        "pr.epochs_per_iteration": "1",
    }
    train, valid = data["labeled"][:36], data["labeled"][36:]
    model, log = segpr.train_lupr(train, valid, data["unlabeled"], data["lexicon"], config)
    assert log[0].startswith("iter=0 ") and len(log) == 2, log

    sentence = data["test"][0]
    words = model.segment(sentence)
    assert "".join(words) == sentence.replace(" ", "")
    best = model.kbest(sentence, 3)
    assert best[0][0] == model.tags(sentence)
    assert all(a[1] >= b[1] for a, b in zip(best, best[1:]))

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.bin")
        model.save(path)
        again = segpr.Model.load(path)
        assert again.to_bytes() == model.to_bytes()
        assert again.segment(sentence) == words

    pred = [" ".join(model.segment(s)) for s in data["test"]]
    f = segpr.evaluate(data["test"], pred)["F"]
    print(f"{model!r}: test F={f:.4f}")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
