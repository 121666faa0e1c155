"""
Dataset ingestion: IDX image tensors, CSV tables and planted synthetic data.
"""

from __future__ import annotations

import csv
import gzip
import logging
import math
import struct
from pathlib import Path
from typing import Any, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from ._core import Dataset, subset
from ._errors import ConfigurationError, FormatError
from ._types import DatasetSource, Document, SynthSpec

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

PathLike = Union[str, Path]

SYNTH_DEFAULTS: SynthSpec = {
    'kind': 'gaussian-clusters',
    'n': 500,
    'seed': 0,
    'dim': 2,
    'scale': 1.0,
    'outliers': 0,
    'displacement': 20.0,
    'duplicates': 0,
    'multiplicity': 5,
    'image_size': 8,
    'prototypes': 4,
    'noise': 0.05,
}


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == '.gz' else open
    with opener(path, 'rb') as f:
        return f.read()


def _idx_header(raw: bytes, path: PathLike, magic: int, dims: int) -> Tuple[int, ...]:
    header = 4 + 4 * dims
    if len(raw) < 4:
        raise FormatError(f'{path}: file too short for an IDX magic number')
    (found,) = struct.unpack('>I', raw[:4])
    if found != magic:
        raise FormatError(f'{path}: IDX magic 0x{found:08x}, expected 0x{magic:08x}')
    if len(raw) < header:
        raise FormatError(f'{path}: truncated IDX header')
    shape = struct.unpack(f'>{dims}I', raw[4:header])
    expected = math.prod(shape)
    found_bytes = len(raw) - header
    if found_bytes != expected:
        raise FormatError(
            f'{path}: IDX payload holds {found_bytes} bytes, dimensions {shape}'
            f' need {expected}'
        )
    return shape


def load_idx_labels(path: PathLike) -> np.ndarray:
    raw = _read_bytes(path)
    _idx_header(raw, path, IDX_LABEL_MAGIC, 1)
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx(path: PathLike, labels_path: Optional[PathLike] = None) -> Dataset:
    """uint8 image tensor (n, h, w) to an n x (h*w) Dataset scaled into [0, 1]."""
    raw = _read_bytes(path)
    n, h, w = _idx_header(raw, path, IDX_IMAGE_MAGIC, 3)
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, h * w)
    labels = None
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if labels.shape[0] != n:
            raise FormatError(f'{labels_path}: {labels.shape[0]} labels for {n} images')
    logger.info('loaded %d %dx%d images from %s', n, h, w, path)
    return Dataset.from_array(
        pixels.astype(np.float64) / 255.0,
        shape_tag=(h, w, 1),
        name=Path(path).name,
        labels=labels,
    )


def load_csv(path: PathLike, has_header: bool = False) -> Dataset:
    rows: List[List[float]] = []
    columns: Optional[List[str]] = None
    width = None
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        for record in reader:
            if not record or all(not cell.strip() for cell in record):
                continue
            if has_header and columns is None:
                columns = [cell.strip() for cell in record]
                width = len(columns)
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise FormatError(
                    f'{path}: row {reader.line_num} has {len(record)} fields,'
                    f' expected {width}'
                )
            values = []
            for col, cell in enumerate(record, 1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise FormatError(
                        f'{path}: non-numeric cell {cell!r} at row {reader.line_num},'
                        f' column {col}'
                    ) from None
            rows.append(values)
    if not rows:
        raise FormatError(f'{path}: no data rows')
    return Dataset.from_array(
        np.array(rows), name=Path(path).name, column_names=columns
    )


def write_csv(data: Dataset, path: PathLike) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        names = data.column_names or [f'x{j}' for j in range(data.dim)]
        writer.writerow(names)
        for row in data.observations:
            writer.writerow([repr(float(v)) for v in row])


class SynthResult(NamedTuple):
    dataset: Dataset
    outlier_ids: Tuple[int, ...]
    duplicate_groups: Tuple[Tuple[int, ...], ...]

    def annotations(self) -> Document:
        return {
            'name': self.dataset.name,
            'n': self.dataset.n,
            'outlier_ids': list(self.outlier_ids),
            'duplicate_groups': [list(g) for g in self.duplicate_groups],
        }


def _synth_options(spec: SynthSpec) -> SynthSpec:
    unknown = set(spec) - set(SYNTH_DEFAULTS) - {'centers'}
    if unknown:
        raise ConfigurationError(f'unknown synth options: {sorted(unknown)}')
    options: Any = {**SYNTH_DEFAULTS, **spec}
    if options['kind'] not in ('gaussian-clusters', 'two-moons', 'image-blobs'):
        raise ConfigurationError(f'unknown synth kind {options["kind"]!r}')
    for key in ('n', 'outliers', 'duplicates', 'multiplicity'):
        if int(options[key]) < 0:
            raise ConfigurationError(f'{key} must be >= 0, got {options[key]!r}')
    if options['duplicates'] and options['multiplicity'] < 2:
        raise ConfigurationError('duplicate multiplicity must be >= 2')
    return options


def _clusters(options, count: int, rng: np.random.Generator):
    dim = int(options['dim'])
    if options.get('centers') is not None:
        centers = np.asarray(options['centers'], dtype=np.float64)
        if centers.ndim != 2 or centers.shape[1] != dim:
            raise ConfigurationError(f'centers must be a list of {dim}-vectors')
    else:
        centers = np.zeros((2, dim))
        centers[:, 0] = (-5.0, 5.0)
    labels = np.arange(count) % centers.shape[0]
    points = centers[labels] + float(options['scale']) * rng.standard_normal(
        (count, dim)
    )
    return points, labels, centers[labels]


def _moons(options, count: int, rng: np.random.Generator):
    if int(options['dim']) != 2:
        raise ConfigurationError('two-moons data is 2-dimensional')
    labels = np.arange(count) % 2
    t = rng.uniform(0.0, math.pi, size=count)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    points = np.where(labels[:, None] == 0, upper, lower)
    points = points + float(options['scale']) * rng.standard_normal((count, 2))
    centres = np.array([[0.0, 2 / math.pi], [1.0, 0.5 - 2 / math.pi]])
    return points, labels, centres[labels]


def _blob_prototypes(size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    grid = np.arange(size, dtype=np.float64)
    rr, cc = np.meshgrid(grid, grid, indexing='ij')
    protos = np.empty((count, size * size))
    for p in range(count):
        cy, cx = rng.uniform(1.5, size - 2.5, size=2)
        width = rng.uniform(1.0, 2.0)
        blob = np.exp(-((rr - cy) ** 2 + (cc - cx) ** 2) / (2 * width**2))
        protos[p] = blob.ravel()
    return protos


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def _blobs(options, count: int, rng: np.random.Generator):
    size = int(options['image_size'])
    protos = _blob_prototypes(size, int(options['prototypes']), rng)
    labels = np.arange(count) % protos.shape[0]
    noise = float(options['noise']) * rng.standard_normal((count, size * size))
    return _quantize(protos[labels] + noise), labels, protos[labels]


def generate_synth(spec: SynthSpec) -> SynthResult:
    """Planted data: inliers, exact duplicates of central inliers, far outliers.

    Rows are laid out as inliers, then the extra duplicate copies, then the
    outliers. Duplicates copy the inliers closest to their own cluster centre.
    Tabular outliers sit ``displacement * scale`` beyond the inlier farthest
    from the overall centre, at evenly spaced angles; image outliers are
    uniform-noise images.
    """
    options: Any = _synth_options(spec)
    rng = np.random.default_rng(int(options['seed']))
    kind = options['kind']
    outliers = int(options['outliers'])
    groups = int(options['duplicates'])
    copies = groups * (int(options['multiplicity']) - 1)
    inliers = int(options['n']) - outliers - copies
    if inliers < max(groups, 2):
        raise ConfigurationError(
            f'n={options["n"]} leaves {inliers} inliers after planting'
            f' {outliers} outliers and {copies} duplicate copies'
        )

    make = {'gaussian-clusters': _clusters, 'two-moons': _moons, 'image-blobs': _blobs}
    points, labels, centres = make[kind](options, inliers, rng)

    order = np.argsort(((points - centres) ** 2).sum(axis=1), kind='stable')
    originals = np.sort(order[:groups])
    rows = [points]
    row_labels = [labels]
    duplicate_groups = []
    next_id = inliers
    for i in originals:
        extra = int(options['multiplicity']) - 1
        rows.append(np.repeat(points[i : i + 1], extra, axis=0))
        row_labels.append(np.full(extra, labels[i]))
        duplicate_groups.append((int(i), *range(next_id, next_id + extra)))
        next_id += extra

    if outliers:
        if kind == 'image-blobs':
            size = int(options['image_size'])
            far = rng.integers(0, 256, size=(outliers, size * size)) / 255.0
        else:
            far = _far_points(points, outliers, options, rng)
        rows.append(far)
        row_labels.append(np.full(outliers, -1))
    outlier_ids = tuple(range(next_id, next_id + outliers))

    shape = None
    if kind == 'image-blobs':
        size = int(options['image_size'])
        shape = (size, size, 1)
    data = Dataset.from_array(
        np.concatenate(rows),
        shape_tag=shape,
        name=f'synth-{kind}-{options["seed"]}',
        labels=np.concatenate(row_labels),
    )
    return SynthResult(
        dataset=data, outlier_ids=outlier_ids, duplicate_groups=tuple(duplicate_groups)
    )


def _far_points(points: np.ndarray, count: int, options, rng) -> np.ndarray:
    centre = points.mean(axis=0)
    reach = np.sqrt(((points - centre) ** 2).sum(axis=1)).max()
    radius = reach + float(options['displacement']) * float(options['scale'])
    dim = points.shape[1]
    angles = 2 * math.pi * np.arange(count) / count + rng.uniform(-0.1, 0.1, count)
    far = np.tile(centre, (count, 1))
    if dim == 1:
        far[:, 0] += radius * np.where(np.arange(count) % 2 == 0, 1.0, -1.0)
    else:
        far[:, 0] += radius * np.cos(angles)
        far[:, 1] += radius * np.sin(angles)
    return far


def split_holdout(
    data: Dataset, fraction: float, seed: int
) -> Tuple[Dataset, Dataset]:
    """Random (train, validation) partition with ``ceil(fraction * n)`` held out."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(
            f'validation fraction must lie in (0, 1), got {fraction}'
        )
    held = math.ceil(round(fraction * data.n, 9))
    if not 2 <= held <= data.n - 2:
        raise ConfigurationError(f'a {fraction} split of {data.n} rows is too small')
    perm = np.random.default_rng(seed).permutation(data.n)
    return subset(data, perm[held:]), subset(data, perm[:held])


def load_dataset(
    source: DatasetSource, seed: int = 0
) -> Tuple[Dataset, Optional[SynthResult]]:
    kind = source.get('kind')
    if kind == 'csv':
        return load_csv(_path(source), bool(source.get('has_header', False))), None
    if kind == 'idx':
        return load_idx(_path(source), source.get('labels_path')), None
    if kind == 'synth':
        spec: Any = {'seed': seed, **(source.get('synth') or {})}
        result = generate_synth(spec)
        return result.dataset, result
    raise ConfigurationError(f'unknown dataset kind {kind!r}')


def _path(source: DatasetSource) -> str:
    if not source.get('path'):
        raise ConfigurationError(f'a {source.get("kind")} dataset needs a path')
    return source['path']
