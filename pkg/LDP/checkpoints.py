'''
Single-file checkpoint container.

Layout: one JSON header line (schema id, kind, metadata, tensor index) followed by the
tensor payloads as little-endian float64 in index order. Headers are written with sorted
keys and no timestamps, so equal states give equal bytes.
'''

import hashlib
import json
import os

import numpy as np

try:
    from LDP import autodiff as ad
    from LDP.errors import ConfigError, DataError
    from LDP.micro_mllm import MicroModel, ModelConfig
except ModuleNotFoundError:
    import autodiff as ad
    from errors import ConfigError, DataError
    from micro_mllm import MicroModel, ModelConfig

CHECKPOINT_SCHEMA = 'ldp.checkpoint/1'
PAYLOAD_DTYPE = np.dtype('<f8')


def write_container(path, kind, meta, tensors):
    """
    Write named arrays and metadata to a checkpoint file.
    :param path: Output file path
    :param kind: 'model' or 'adapter'
    :param meta: JSON-serialisable metadata dict
    :param tensors: Dict name -> array or Tensor
    :return: SHA-256 hex digest of the written bytes
    """
    index = []
    payloads = []
    offset = 0
    for name in sorted(tensors):
        value = tensors[name]
        array = np.ascontiguousarray(value.data if isinstance(value, ad.Tensor) else value, dtype=PAYLOAD_DTYPE)
        index.append({'name': name, 'shape': list(array.shape), 'offset': offset, 'count': int(array.size)})
        payloads.append(array.tobytes(order='C'))
        offset += array.size
    header = {'schema': CHECKPOINT_SCHEMA, 'kind': kind, 'meta': meta, 'tensors': index}
    blob = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8') + b'\n' + b''.join(payloads)

    tmp_path = f'{path}.tmp'
    with open(tmp_path, 'wb') as out_file:
        out_file.write(blob)
    os.replace(tmp_path, path)
    return hashlib.sha256(blob).hexdigest()


def read_container(path, expected_kind=None):
    """
    Read a checkpoint file.
    :param path: Checkpoint path
    :param expected_kind: Optional kind the file must have
    :return: (kind, meta dict, dict name -> numpy array)
    """
    try:
        with open(path, 'rb') as in_file:
            header_line = in_file.readline()
            payload = in_file.read()
    except FileNotFoundError as error:
        raise DataError(f'checkpoint {path} does not exist') from error
    try:
        header = json.loads(header_line.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise DataError(f'{path} has no readable checkpoint header') from error
    if header.get('schema') != CHECKPOINT_SCHEMA:
        raise DataError(f'{path} is not a {CHECKPOINT_SCHEMA} file')
    if expected_kind is not None and header['kind'] != expected_kind:
        raise ConfigError(f'{path} holds a {header["kind"]} checkpoint, expected {expected_kind}')

    usable = len(payload) - len(payload) % PAYLOAD_DTYPE.itemsize
    values = np.frombuffer(payload[:usable], dtype=PAYLOAD_DTYPE)
    tensors = {}
    for entry in header['tensors']:
        start, count = entry['offset'], entry['count']
        if start + count > values.size:
            raise DataError(f'{path} is truncated at tensor {entry["name"]}')
        tensors[entry['name']] = values[start:start + count].reshape(entry['shape']).copy()
    return header['kind'], header['meta'], tensors


def save_model(model, path, extra_meta=None):
    """ Full-model checkpoint: ModelConfig plus every base parameter """
    meta = {'model': model.config.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    return write_container(path, 'model', meta, model.named_parameters())


def load_model(path):
    """
    Rebuild a MicroModel from a full-model checkpoint
    :param path: Checkpoint path
    :return: (MicroModel, meta dict)
    """
    _, meta, tensors = read_container(path, expected_kind='model')
    model = MicroModel(ModelConfig(**meta['model']))
    params = model.named_parameters()
    if set(params) != set(tensors):
        raise ConfigError(f'{path} parameters do not match the model built from its config')
    for name, tensor in params.items():
        if tensor.shape != tensors[name].shape:
            raise ConfigError(f'{path}: parameter {name} has shape {tensors[name].shape}, expected {tensor.shape}')
        tensor.data = tensors[name]
    return model, meta
