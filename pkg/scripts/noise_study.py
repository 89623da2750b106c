"""Detection quality with and without meter error on a bundled fixture.

Builds a grid and a random database once, then runs the detector under an
error-free setting and under the noisy default, and prints per-class
indicators, per-DMA prediction indices and the random-inspection baseline.
"""

import argparse
import json
import time

from leakhunt import synth
from leakhunt.detect import DetectionConfig
from leakhunt.evaluate import (
    ANY,
    detection_indicators,
    detection_rate,
    dma_table,
    mean_prediction_index,
    random_baseline,
    random_ranking_campaign,
    run_campaign,
    sampling_indicators,
)
from leakhunt.scenariodb import build_random_db, build_scenario_db


def run(args) -> dict:
    net = synth.load_fixture(args.fixture)
    orifice = (args.orifice_min, args.orifice_max)
    t = time.perf_counter()
    sdb = build_scenario_db(net, orifice_range=orifice, workers=args.workers)
    rdb = build_random_db(net, orifice_range=orifice, n_events=args.events, seed=args.seed, workers=args.workers)
    print(f"databases: {len(sdb)} scenarios, {len(rdb)} events in {time.perf_counter() - t:.1f} s")
    total = net.total_length()
    settings = {
        "error-free": (DetectionConfig(0.0, 0.0), 0.0),
        "noisy": (DetectionConfig(args.threshold, args.meter_error), args.meter_error),
    }
    out = {}
    for label, (cfg, noise) in settings.items():
        res = run_campaign(rdb, sdb, net, cfg, noise=noise, seed=args.seed, workers=args.workers)
        ind = detection_indicators(res, total)
        samp = sampling_indicators(res, len(net.meters))
        out[label] = {
            "detection_rate": detection_rate(res),
            "mean_prediction_index": mean_prediction_index(res, net),
            "percentage_to_inspect": ind[ANY].percentage_to_inspect if ind[ANY] else None,
            "classes": {k: (v.n_events, v.true_prediction, v.average_prediction) if v else None for k, v in ind.items()},
            "always_predicted": samp.always_predicted,
            "never_predicted": samp.never_predicted,
            "dmas": {r.dma: r.prediction_index for r in dma_table(res, net)},
        }
    rnd = random_ranking_campaign([rdb.pipe_of(i) for i in range(len(rdb))], net, args.seed)
    out["random-inspection"] = {
        "percentage_to_inspect": detection_indicators(rnd, total)[ANY].percentage_to_inspect,
        "uniform_dma_expectation": random_baseline(len(net.dmas)),
    }
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--fixture", default="dma3", choices=sorted(synth.FIXTURES))
    ap.add_argument("--events", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--orifice-min", type=float, default=0.001)
    ap.add_argument("--orifice-max", type=float, default=0.01)
    ap.add_argument("--threshold", type=float, default=0.1)
    ap.add_argument("--meter-error", type=float, default=0.5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args()
    res = run(args)
    print(json.dumps(res, indent=1, default=str))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=1, default=str)


if __name__ == "__main__":
    main()
