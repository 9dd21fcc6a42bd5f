#!/usr/bin/env python3
"""Render one scaleogram PGM per quadrant from a dataset, for eyeballing.

  python scripts/render_scaleograms.py --data synth.eegp --out previews/
"""

import argparse
import os
import sys

from scalevit.cwt import cwt_forward, pgm_bytes, rasterize, scale_grid, scaleogram
from scalevit.dataio import read_portable
from scalevit.trials import Quadrant, zscore_normalize
from scalevit.util import atomic_write_bytes


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channel", type=int, default=0, help="0-based channel row")
    p.add_argument("--scales", type=int, default=224)
    p.add_argument("--size", type=int, default=224)
    args = p.parse_args()

    dataset = read_portable(args.data)
    os.makedirs(args.out, exist_ok=True)
    seen = set()
    for rec in dataset.records:
        q = rec.labels.vaq_quadrant
        if q in seen:
            continue
        seen.add(q)
        trial = rec.trial
        grid = scale_grid(4.0, 45.0, args.scales, trial.sample_rate_hz)
        coeffs = cwt_forward(zscore_normalize(trial.samples[args.channel]), grid)
        image = rasterize(scaleogram(coeffs, grid), args.size, args.size)
        name = (f"{q.name}_p{trial.participant_id:02d}"
                f"_v{trial.video_id:02d}.pgm")
        atomic_write_bytes(os.path.join(args.out, name), pgm_bytes(image))
        print(f"wrote {name}")
        if len(seen) == len(Quadrant):
            break
    return 0


if __name__ == "__main__":
    sys.exit(main())
