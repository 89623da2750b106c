"""Wall-clock time of database builds on the 853-pipe fixture."""

import argparse
import time

from leakhunt import synth
from leakhunt.scenariodb import build_random_db, build_scenario_db, default_workers


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", type=int, default=default_workers())
    ap.add_argument("--events", type=int, default=10_000)
    ap.add_argument("--skip-grid", action="store_true")
    args = ap.parse_args()
    net = synth.load_fixture("large853")
    print(f"{net.n_p} pipes, {net.n_n} junctions, {args.workers} workers on {default_workers()} core(s)")
    t = time.perf_counter()
    rdb = build_random_db(net, n_events=args.events, workers=args.workers)
    print(f"random db: {len(rdb)} events, {rdb.n_failed} failed, {time.perf_counter() - t:.1f} s")
    if not args.skip_grid:
        t = time.perf_counter()
        sdb = build_scenario_db(net, workers=args.workers)
        print(f"grid db: {len(sdb)} scenarios, {sdb.n_failed} failed, {time.perf_counter() - t:.1f} s")


if __name__ == "__main__":
    main()
