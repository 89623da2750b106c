"""Regenerate the bundled network fixtures from their deterministic builders."""

import argparse
from pathlib import Path

from leakhunt import synth
from leakhunt.network import save_network, load_network


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    default_out = Path(synth.__file__).parent / "data"
    ap.add_argument("--out", type=Path, default=default_out)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, build in synth.BUILDERS.items():
        net = build()
        path = args.out / synth.FIXTURES[name]
        save_network(net, path)
        again = load_network(path)
        assert again.fingerprint() == net.fingerprint(), name
        print(f"{path.name}: {again.n_p} pipes, {again.n_n} junctions, {len(again.dmas)} DMAs, fingerprint {again.fingerprint()}")


if __name__ == "__main__":
    main()
