from typing import (
    TypedDict,
    Literal,
    Optional,
    Sequence,
    Any,
    Union,
    Tuple,
    Dict,
)

try:
    from typing import Required
except ImportError:
    from typing_extensions import Required

Document = Dict[str, Any]

Family = Literal[
    'gaussian-mle',
    'kde',
    'gmm',
    'vae',
    'dp-histogram',
    'constant',
]

SeedPolicy = Literal['per-fit', 'shared']

CovarianceMode = Literal['diagonal', 'full']

Likelihood = Literal['bernoulli', 'gaussian', 'isotropic']

# (height, width, channels); None for flat vectors
ImageShape = Tuple[int, int, int]


class GaussianOptions(TypedDict, total=False):
    mode: CovarianceMode


class KdeOptions(TypedDict, total=False):
    bandwidth: Union[float, Literal['silverman']]


class GmmOptions(TypedDict, total=False):
    components: int
    max_iters: int
    tol: float


class VaeOptions(TypedDict, total=False):
    latent_dim: int
    hidden: Sequence[int]
    likelihood: Likelihood
    learning_rate: float
    batch_size: int
    importance_samples: int
    dynamic_binarization: bool
    binarize_seed: int
    alpha: float


class DpHistogramOptions(TypedDict, total=False):
    epsilon: Required[float]
    bins: int
    low: Union[float, Sequence[float]]
    high: Union[float, Sequence[float]]


class ConstantOptions(TypedDict, total=False):
    log_density: float


class OutlierOptions(TypedDict, total=False):
    weight: float
    variance_scale: float


class EstimatorDocument(TypedDict, total=False):
    family: Required[Family]
    hyperparameters: Document
    epochs: int
    seed_policy: SeedPolicy
    outlier: Optional[OutlierOptions]


SynthKind = Literal['gaussian-clusters', 'two-moons', 'image-blobs']


class SynthSpec(TypedDict, total=False):
    kind: Required[SynthKind]
    n: Required[int]
    seed: int
    dim: int
    centers: Sequence[Sequence[float]]
    scale: float
    outliers: int
    displacement: float
    duplicates: int
    multiplicity: int
    image_size: int
    prototypes: int
    noise: float


class DatasetSource(TypedDict, total=False):
    kind: Required[Literal['csv', 'idx', 'synth']]
    path: str
    labels_path: str
    has_header: bool
    synth: SynthSpec


class RunConfig(TypedDict, total=False):
    dataset: Required[DatasetSource]
    estimator: Required[EstimatorDocument]
    repetitions: int
    folds: int
    seed: int
    workers: int
    out_dir: str
    force_partial: bool
    checkpoints: Sequence[int]
    quantiles: Sequence[float]
    validation: DatasetSource
    validation_fraction: float
    samples_from_validation: bool
    bin_width: float
    top_fraction: float
    loo_repeats: int
    timestamp: bool


class RunConfigOverrides(TypedDict, total=False):
    seed: int
    workers: int
    out_dir: str
    force_partial: bool


class FitProvenance(TypedDict, total=False):
    spec_hash: str
    seed: int
    coordinates: Optional[Tuple[int, int]]


class Provenance(TypedDict, total=False):
    config_hash: Optional[str]
    spec_hash: Optional[str]
    seed: Optional[int]
    command: Optional[str]
    created: Optional[str]


class SummaryStatistics(TypedDict):
    count: int
    mean: float
    median: float
    skewness: float
    percentiles: Dict[str, float]


class DpVerdict(TypedDict):
    epsilon: float
    max_score: float
    standard_error: float
    argmax_id: int
    threshold: float
    passed: bool
    caveat: str


class HistBins(TypedDict):
    bin_width: float
    edges: Sequence[float]
    memorized: Sequence[int]
    regular: Sequence[int]
    proportion: Sequence[float]
