"""Smoke test for the sgctr extension module.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import math
import os
import tempfile

import sgctr


def main():
    data = sgctr.synth(n_train=3000, n_test=600, seed=3)
    schema = data["schema"]
    print(schema, schema.roles)
    assert schema.n_features == len(schema.field_names)
    assert sgctr.Schema.parse(schema.to_text()).hash == schema.hash

    train_tokens, train_labels = data["train"]
    test_tokens, test_labels = data["test"]
    model, losses = sgctr.fit(schema, train_tokens, train_labels, dim=16, epochs=1, temperature=0.2, seed=1)
    assert all(math.isfinite(x) for x in losses)
    print(f"trained {model.n_parameters} parameters, {len(losses)} steps, last loss {losses[-1]:.4f}")

    for mode in ["sgctr", "onestep", "genfea", "disc"]:
        probs = model.predict(test_tokens, mode_name=mode)
        assert all(0.0 < p < 1.0 for p in probs)
        print(f"{mode:8s} auc={sgctr.auc(probs, test_labels):.4f} logloss={sgctr.logloss(probs, test_labels):.4f}")

    assert model.predict(test_tokens[:50], steps=1) == model.predict(test_tokens[:50], mode_name="onestep")
    assert model.predict(test_tokens[:50], cache=True) == model.predict(test_tokens[:50])

    trace, weights = model.refine_trace(test_tokens[0], steps=4)
    assert [t[0] for t in trace] == [1, 2, 3, 4]
    assert trace[-1][1] == 0
    print("trace", [(s, l) for s, l, _, _ in trace], "weights", weights)

    assert sgctr.gamma("cosine", 0.0) == 1.0 and sgctr.gamma("cosine", 1.0) == 0.0
    assert 0 < sgctr.hash_encode("c1", "abc", 1000) <= 1000
    assert sgctr.hash_encode("c1", "", 1000) == 0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ckpt")
        model.save(path)
        again = sgctr.Model.load(path, schema)
        assert again.n_parameters == model.n_parameters

    try:
        sgctr.gamma("bogus", 0.5)
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("unknown schedule accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
