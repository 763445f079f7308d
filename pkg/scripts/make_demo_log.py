"""Write a synthetic access log for the bundled demo application.

    python scripts/make_demo_log.py --lines 2000 --seed 0 --out work/access.jsonl
"""
import argparse

from bacdetect.demo import generate_log
from bacdetect.traffic import atomic_write_text, serialize_record


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--lines", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    records = generate_log(args.lines, args.seed)
    atomic_write_text(args.out, "".join(serialize_record(r) + "\n" for r in records))
    print(f"{len(records)} records -> {args.out}")


if __name__ == "__main__":
    main()
