"""End-to-end exercise of the pathlp_py extension module.

Build the module first, then run this file directly:

    cargo build -p pathlp-py --release --features extension-module
    cp target/release/libpathlp_py.so python/pathlp_py.so
    python3 python/smoke_test.py
"""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import pathlp_py as kg


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        data_dir = Path(tmp) / "kg"
        data_dir.mkdir()

        summary = kg.synth_kg(
            data_dir, entities=30, rule_facts=6, noise_facts=10, seed=3
        )
        assert summary["entities"] == 30
        assert summary["valid"] == 1 and summary["test"] == 1

        data = kg.Dataset(data_dir)
        assert data.entity_count == 30
        assert data.relations() == ["n0", "n1", "r1", "r2", "rq"]
        head, rel, tail = data.triples("test")[0]
        assert rel == "rq"
        assert any(r in ("r1", "r2") for r, _ in data.neighbors(tail))

        predictor = kg.Predictor.pretrain(
            data, d=16, layers=1, heads=2, epochs=8, chains_per_triple=4, seed=7
        )
        losses = predictor.losses()
        assert losses and losses[-1][1] < losses[0][1], "loss did not drop"

        # Checkpoints round-trip bit-for-bit.
        ckpt = Path(tmp) / "predictor.ckpt"
        predictor.save(ckpt)
        reloaded = kg.Predictor.load(ckpt, vocab_hash=data.vocab_hash)
        context = kg.sample_paths(data, head, rel, tail, k=2, seed=5)[0]
        p = predictor.score(data, head, rel, tail, context)
        assert 0.0 <= p <= 1.0
        assert p == reloaded.score(data, head, rel, tail, context)

        top = predictor.top(data, rel, tail, context, k=3)
        assert len(top) == 3 and top[0][1] >= top[1][1] >= top[2][1]
        assert predictor.rank(data, head, rel, tail, context) >= 1

        searcher = kg.Policy.train(
            data, reward="answer", steps=2, epochs=5, seed=11, relation="rq"
        )
        assert len(searcher.rewards()) == 5
        walker = kg.Policy.train(
            data, reward="predictor", predictor=predictor, steps=2, epochs=5, seed=11
        )

        path = walker.walk(data, head, rel, tail, steps=2)
        assert len(path) == 2
        beams = searcher.beam(data, head, rel, tail, steps=2, width=4)
        assert beams and all(
            a[0] >= b[0] for a, b in zip(beams, beams[1:])
        ), "beams out of order"
        assert all(lp <= 1e-9 for lp, _ in beams)

        pol_ckpt = Path(tmp) / "policy.ckpt"
        walker.save(pol_ckpt)
        kg.Policy.load(pol_ckpt, vocab_hash=data.vocab_hash)

        for strategy, args in [
            ("sampling", dict(predictor=predictor)),
            ("rl", dict(predictor=predictor, policy=walker)),
            ("minerva", dict(predictor=predictor, policy=searcher)),
            ("answer-search", dict(policy=searcher)),
        ]:
            metrics = kg.evaluate(data, strategy, steps=2, seed=5, **args)
            again = kg.evaluate(data, strategy, steps=2, seed=5, **args)
            assert metrics["strategy"] == strategy
            assert metrics["queries"] == 2, metrics
            assert 0.0 <= metrics["hits"][1] <= metrics["hits"][10] <= 1.0
            assert 0.0 < metrics["mrr"] <= 1.0 and not math.isnan(metrics["mrr"])
            assert metrics == again, f"{strategy} evaluation not deterministic"
            print(f"{strategy:>13}: MRR {metrics['mrr']:.3f} over {metrics['queries']} queries")

    print("smoke test passed")


if __name__ == "__main__":
    main()
