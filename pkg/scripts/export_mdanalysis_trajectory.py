"""Export the C-alpha trace of the MDAnalysis AdK test trajectory.

Writes ``data/adk_dims2_ca.txt`` in the plain-text format read by
``chainspec.datasets.load_trajectory``. Needs MDAnalysis; the topology and
trajectory come from MDAnalysisTests unless ``--data-dir`` points at a
directory holding ``adk.psf`` and ``adk_dims2.dcd``.

    python3 scripts/export_mdanalysis_trajectory.py [--data-dir DIR] [--out PATH]
"""
import argparse
import os
import sys

import numpy as np

from chainspec.datasets import save_trajectory


def _locate(data_dir):
    if data_dir:
        return os.path.join(data_dir, "adk.psf"), os.path.join(data_dir, "adk_dims2.dcd")
    from MDAnalysisTests.datafiles import DCD2, PSF
    return PSF, DCD2


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "adk_dims2_ca.txt"))
    args = p.parse_args(argv)
    import MDAnalysis as mda

    psf, dcd = _locate(args.data_dir)
    u = mda.Universe(psf, dcd)
    ca = u.select_atoms("name CA")
    frames = np.array([ca.positions.astype(float) for _ in u.trajectory])
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_trajectory(args.out, frames,
                    comment=f"C-alpha trace of {os.path.basename(dcd)}\n{len(frames)} frames, {ca.n_atoms} atoms")
    print(f"wrote {len(frames)} frames x {ca.n_atoms} atoms to {os.path.abspath(args.out)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
