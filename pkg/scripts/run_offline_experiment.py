"""Run mine -> simulate --offline -> train -> eval over several seeds and print a table.

    python scripts/run_offline_experiment.py --seeds 0 7 42 --backend ngram --work work/exp
"""
import argparse
import json
from pathlib import Path

from bacdetect.cli import main as cli
from bacdetect.demo import generate_log
from bacdetect.traffic import atomic_write_text, serialize_record


def step(*argv):
    code = cli([str(a) for a in argv])
    if code:
        raise SystemExit(f"{argv[0]} exited with {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 7, 42])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--backend", choices=["ngram", "attention"], default="ngram")
    ap.add_argument("--work", default="work/exp")
    args = ap.parse_args()

    rows = []
    for seed in args.seeds:
        w = Path(args.work) / f"seed{seed}"
        w.mkdir(parents=True, exist_ok=True)
        log = w / "access.jsonl"
        atomic_write_text(log, "".join(serialize_record(r) + "\n" for r in generate_log(2000, seed)))
        step("mine", "--logs", log, "--kb", w / "kb.json")
        step("simulate", "--offline", "--kb", w / "kb.json", "--out", w / "corpus.jsonl",
             "--n", args.n, "--seed", seed)
        step("train", "--corpus", w / "corpus.jsonl", "--kb", w / "kb.json", "--bundle", w / "bundle",
             "--backend", args.backend, "--seed", seed)
        step("eval", "--corpus", w / "corpus.jsonl", "--kb", w / "kb.json", "--bundle", w / "bundle",
             "--out-dir", w / "eval", "--seed", seed)
        m = json.loads((w / "eval" / "metrics.json").read_text())
        rows.append((seed, m))

    print(f"{'seed':>6} {'acc':>7} {'prec':>7} {'rec':>7} {'f1':>7} {'mcc':>7}")
    for seed, m in rows:
        print(f"{seed:>6} {m['acc']:7.3f} {m['precision']:7.3f} {m['recall']:7.3f} {m['f1']:7.3f} {m['mcc']:7.3f}")


if __name__ == "__main__":
    main()
