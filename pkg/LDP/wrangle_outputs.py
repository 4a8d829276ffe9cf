'''
Run manifests and output-folder housekeeping.
'''

import hashlib
import json
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field

MANIFEST_SCHEMA = 'ldp.manifest/1'
MANIFEST_NAME = 'manifest.json'


def file_digest(path):
    """ SHA-256 hex digest of a file, read in 1 MiB chunks """
    digest = hashlib.sha256()
    with open(path, 'rb') as in_file:
        for chunk in iter(lambda: in_file.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_time: float = 0.0
    metrics: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time, repr=False)

    def add_inputs(self, paths):
        """ Record input digests keyed by file name """
        for path in paths:
            if path is not None:
                self.inputs[os.path.basename(path)] = file_digest(path)

    def add_outputs(self, paths, out_path):
        """ Record output digests keyed by the path relative to the output folder """
        for path in paths:
            self.outputs[os.path.relpath(path, out_path)] = file_digest(path)

    def to_dict(self):
        record = asdict(self)
        record.pop('started')
        record['schema'] = MANIFEST_SCHEMA
        record['inputs'] = dict(sorted(self.inputs.items()))
        record['outputs'] = dict(sorted(self.outputs.items()))
        return record


def write_manifest(manifest, out_path, file_logger):
    """
    Function to finish a run: stamp the wall-time and write manifest.json atomically
    :param manifest: RunManifest
    :param out_path: Output folder
    :param file_logger: Logger that outputs files to log
    :return: Path of the manifest
    """
    manifest.wall_time = round(time.time() - manifest.started, 3)
    path = os.path.join(out_path, MANIFEST_NAME)
    fd, tmp_path = tempfile.mkstemp(prefix='.manifest', dir=out_path)
    with os.fdopen(fd, 'w') as out_file:
        json.dump(manifest.to_dict(), out_file, indent=1, sort_keys=True)
        out_file.write('\n')
    os.replace(tmp_path, path)
    file_logger.debug(f'Run manifest written to {path}')
    return path


def read_manifest(path):
    with open(path, 'r') as in_file:
        return json.load(in_file)


def variant_name(label):
    """ Folder-safe form of a variant label such as 'r=16' or 'sft+dpo' """
    return label.replace('=', '_').replace('+', '_').replace('/', '_')


def partition_variants(work_folder, out_path, file_logger):
    """
    Function to move the working folders of ablation variants into <out_path>/variants
    :param work_folder: Temporary folder holding one sub folder per variant
    :param out_path: Output folder
    :param file_logger: Logger that outputs files to log
    :return: Paths of the moved files
    """
    file_logger.debug('Partitioning variant outputs into variant folders')
    moved = []
    for variant in sorted(os.listdir(work_folder)):
        source = os.path.join(work_folder, variant)
        if not os.path.isdir(source):
            continue
        target = os.path.join(out_path, 'variants', variant)
        try:
            os.makedirs(target)
        except FileExistsError:
            file_logger.warning(f"Output folder for variant: '{variant}' already exists")
        for file in sorted(os.listdir(source)):
            os.replace(os.path.join(source, file), os.path.join(target, file))
            moved.append(os.path.join(target, file))
    shutil.rmtree(work_folder, ignore_errors=True)
    return moved
