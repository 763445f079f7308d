"""Serve a mock chat-completions endpoint and the demo target app until Ctrl-C.

    python scripts/serve_mocks.py --script valid --config-out work/sim.json
    bacdetect simulate --config work/sim.json --kb work/kb.json --out work/llm_corpus.jsonl
"""
import argparse
import json
import time
from pathlib import Path

from bacdetect.demo import DemoApp
from bacdetect.simulator.mock import SCRIPTS, MockLlmServer, MockTargetServer


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--script", choices=sorted(SCRIPTS), default="valid")
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--config-out", default="work/sim.json")
    args = ap.parse_args()

    app = DemoApp(sessions={"own-session": 7, "foreign-session": 8})
    with MockLlmServer(args.script) as llm, MockTargetServer(app) as target:
        cfg = {"simulator": {"n": args.n, "llm_url": llm.url, "target_url": target.url,
                             "own_cookie": "own-session", "own_account": "7",
                             "foreign_cookie": "foreign-session", "foreign_account": "8",
                             "backoff_ms": 1.0}}
        out = Path(args.config_out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(cfg, indent=2) + "\n")
        print(f"llm    {llm.url}\ntarget {target.url}\nconfig {out}  (Ctrl-C to stop)", flush=True)
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            pass


if __name__ == "__main__":
    main()
