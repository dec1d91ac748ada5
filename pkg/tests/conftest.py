import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def star_mask_256():
    """One deterministic star-shaped mask/image pair at 256x256."""
    from surfcdm.synthdata import gen_sample, random_shape_spec, ImageDegradationSpec

    rng = np.random.default_rng(20240811)
    spec = random_shape_spec(rng, (256, 256))
    image, mask, centroid = gen_sample(spec, ImageDegradationSpec(), (256, 256), seed=5)
    return image, mask, centroid
