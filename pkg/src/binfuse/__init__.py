"""Range-binned ensemble fusion for image restoration outputs.

Estimate per-bin-set mixture weights on a small reference set, store them
in a lookup table, and fuse test predictions by per-pixel weighted
aggregation.
"""

from .binning import BinGroup, BinSpace, bin_index, bin_indices, partition_prediction, partition_reference
from .em import EmConfig, GmmModel, e_step, gaussian_pdf, init_priors, is_undetermined, m_step, mixture_loglik, run_em
from .fusion import GlobalWeights, fuse_average, fuse_with_lut, fuse_zzpm
from .image_io import (
    ImageFormatError,
    ImageTensor,
    ReferenceBatch,
    flatten,
    load_image,
    rgb_to_y,
    save_image,
    unflatten,
)
from .lut import LutEntry, LutFormatError, WeightLut, dumps_lut, estimate_lut, load_lut, save_lut
from .metrics import MetricReport, evaluate_set, psnr, ssim, write_report_csv
from .synth import (
    RangeProfile,
    SynthData,
    SynthSpec,
    gen_mixture_group,
    gen_set,
    grid_search_oracle,
    range_biased_spec,
    write_synth_tree,
)

__version__ = "0.1.0"
