"""Monte Carlo check of the random-inspection baseline on the 9-DMA fixture.

With the leak DMA known and its pipes inspected in random order, the
expected inspected share of network length is about 50 / n_dmas percent
(exactly 50 / n_dmas * (1 + 1 / m) for m equal-length pipes per DMA).
"""

import argparse

from leakhunt import synth
from leakhunt.evaluate import ANY, detection_indicators, random_baseline, random_ranking_campaign, uniform_pipe_draws


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--fixture", default="dma9", choices=sorted(synth.FIXTURES))
    ap.add_argument("--events", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    net = synth.load_fixture(args.fixture)
    res = random_ranking_campaign(uniform_pipe_draws(net, args.events, args.seed), net, args.seed)
    pct = detection_indicators(res, net.total_length())[ANY].percentage_to_inspect
    m = net.n_p / len(net.dmas)
    print(f"{args.events} events on {args.fixture}: {pct:.3f} % of network length inspected")
    print(f"50/n_dmas = {random_baseline(len(net.dmas)):.3f} %, with finite DMAs {random_baseline(len(net.dmas)) * (1 + 1 / m):.3f} %")


if __name__ == "__main__":
    main()
