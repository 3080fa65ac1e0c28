import shutil

import pytest

from sunsplat import synth
from sunsplat.bundle import save_bundle

# Small but complete: 2 cameras x 4 lightings at 32px, a few hundred
# surfels. Enough structure for interface tests without training cost.
TINY_SPEC = dict(density=6.25, image_size=32, n_cameras=2, seed=5)


@pytest.fixture(scope="session")
def tiny_bundle_src(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundles") / "tiny"
    save_bundle(root, synth.generate(synth.SynthSpec(**TINY_SPEC)))
    return root


@pytest.fixture
def tiny_bundle(tiny_bundle_src, tmp_path):
    """Private copy of the prebuilt bundle; safe to mutate."""
    dst = tmp_path / "bundle"
    shutil.copytree(tiny_bundle_src, dst)
    return dst
