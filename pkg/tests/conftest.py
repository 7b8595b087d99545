import numpy as np
import pytest

from binfuse.binning import BinGroup
from binfuse.image_io import ReferenceBatch
from binfuse.synth import gen_set, range_biased_spec


@pytest.fixture(scope="session")
def biased_dataset():
    """The two-model complementary-strengths dataset used across tests.

    Model 0 is accurate on dark intensities and biased on bright ones;
    model 1 is the mirror image.  20 reference + 20 test images, 128x128.
    """
    spec = range_biased_spec(seed=20240)
    return spec, gen_set(spec)


@pytest.fixture(scope="session")
def biased_reference(biased_dataset):
    _, data = biased_dataset
    return ReferenceBatch.from_images(data.ref_gt, data.ref_preds)


@pytest.fixture(scope="session")
def biased_lut32(biased_reference):
    from binfuse.binning import BinSpace
    from binfuse.em import EmConfig
    from binfuse.lut import estimate_lut

    return estimate_lut(biased_reference, BinSpace(32), EmConfig())


def make_group(gt_values, pred_values, key=None):
    """Assemble a BinGroup directly from value arrays (EM-level tests)."""
    gt = np.asarray(gt_values, dtype=np.float64)
    preds = np.atleast_2d(np.asarray(pred_values, dtype=np.float64))
    if key is None:
        key = (0,) * preds.shape[0]
    return BinGroup(
        key=key,
        pixel_indices=np.arange(gt.size, dtype=np.int64),
        gt_values=gt,
        pred_values=preds,
    )


def random_mixture_params(rng, num_models):
    """Random but identifiable mixture parameters for property tests.

    Component means are spread apart relative to their spreads so EM has a
    well-defined target; weights are drawn from a flat Dirichlet.
    """
    center = rng.uniform(30.0, 225.0)
    offsets = np.linspace(-12.0, 12.0, num_models) if num_models > 1 else np.zeros(1)
    means = center + offsets + rng.uniform(-2.0, 2.0, size=num_models)
    init_var = rng.uniform(0.5, 16.0, size=num_models)
    comp_var = rng.uniform(0.5, 16.0, size=num_models)
    weights = rng.dirichlet(np.ones(num_models))
    return means, init_var, comp_var, weights
