from __future__ import annotations

from typing import Any, Dict, Mapping, Optional

import bson
import numpy as np
from bson import Binary, CodecOptions
from bson.errors import InvalidBSON
from bson.json_util import RELAXED_JSON_OPTIONS, dumps, loads

from ._errors import FormatError

DEFAULT_CODEC_OPTIONS = CodecOptions(tz_aware=True)

# relaxed Extended JSON: plain numbers for finite floats, $numberDouble for nan/inf
REPORT_JSON_OPTIONS = RELAXED_JSON_OPTIONS.with_options(tz_aware=True)

ARRAY_DTYPE = '<f8'


class Codec:
    def __init__(self, options: CodecOptions = DEFAULT_CODEC_OPTIONS):
        self._options = options

    def encode(self, doc: Mapping[str, Any]) -> bytes:
        return bson.encode(plain(doc), codec_options=self._options)

    def decode(self, data: bytes) -> Dict[str, Any]:
        try:
            return bson.decode(data, codec_options=self._options)
        except (InvalidBSON, IndexError) as e:
            raise FormatError(f'corrupt BSON document: {e}') from e


def encode_array(arr: Any) -> Dict[str, Any]:
    """Raw little-endian float64 buffer with its shape."""
    a = np.ascontiguousarray(arr, dtype=ARRAY_DTYPE)
    return {'dtype': ARRAY_DTYPE, 'shape': list(a.shape), 'data': Binary(a.tobytes())}


def decode_array(doc: Optional[Mapping[str, Any]]) -> Optional[np.ndarray]:
    if doc is None:
        return None
    if doc.get('dtype') != ARRAY_DTYPE:
        raise FormatError(f'unsupported array dtype {doc.get("dtype")!r}')
    shape = tuple(int(s) for s in doc['shape'])
    arr = np.frombuffer(bytes(doc['data']), dtype=ARRAY_DTYPE)
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise FormatError(f'array buffer holds {arr.size} values, shape says {shape}')
    return arr.reshape(shape).astype(np.float64)


def plain(value: Any) -> Any:
    """Convert numpy values, tuples and nested mappings into BSON/JSON natives."""
    if isinstance(value, Mapping):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def dumps_document(doc: Mapping[str, Any]) -> str:
    return dumps(plain(doc), json_options=REPORT_JSON_OPTIONS, indent=2) + '\n'


def loads_document(text: str) -> Any:
    return loads(text, json_options=REPORT_JSON_OPTIONS)
