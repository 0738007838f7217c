# SPDX-License-Identifier: GPL-3.0-or-later
import hashlib
import json
import logging
import os
import shutil
import tempfile

from canalatlas.errors import ValidationError


__all__ = ['MANIFEST_NAME', 'ArtifactWriter', 'file_sha256', 'load_manifest']
log = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
MANIFEST_FORMAT = 'canalatlas-manifest'
MANIFEST_VERSION = 1
CHUNK_SIZE = 1024 * 1024


def file_sha256(path):
    """
    Compute the SHA-256 hex digest of a file.

    :param str path: the file path
    :return: the hex digest
    :rtype: str
    """
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(CHUNK_SIZE), b''):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactWriter:
    """
    Stage the outputs of a subcommand and publish them atomically.

    Every artifact is written below a staging directory inside the output directory. On commit
    each file is moved into place with os.replace and the manifest, listing every artifact with
    its content hash, is written last. Nothing is published when the block raises.

    Usage::

        with ArtifactWriter(output_dir, 'ssm') as artifacts:
            save_model(model, artifacts.path('ssm/model.json'))
    """

    def __init__(self, output_dir, subcommand):
        self.output_dir = os.path.abspath(output_dir)
        self.subcommand = subcommand
        self.staging_dir = None
        self.manifest = None

    def __enter__(self):
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as error:
            raise ValidationError(f'The output directory "{self.output_dir}" is not writable: '
                                  f'{error}')
        if not os.access(self.output_dir, os.W_OK):
            raise ValidationError(f'The output directory "{self.output_dir}" is not writable')
        self.staging_dir = tempfile.mkdtemp(prefix='.canalatlas-', dir=self.output_dir)
        log.debug('Staging the %s artifacts in %s', self.subcommand, self.staging_dir)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        try:
            if exc_type is None:
                self.manifest = self.commit()
        finally:
            shutil.rmtree(self.staging_dir, ignore_errors=True)
        return False

    def path(self, relative_path):
        """
        Get the staging path of an artifact, creating its parent directories.

        :param str relative_path: the artifact path relative to the output directory
        :return: the absolute staging path to write to
        :rtype: str
        :raises ValidationError: if the path escapes the output directory
        """
        normalized = os.path.normpath(relative_path)
        if os.path.isabs(normalized) or normalized.startswith(os.pardir) or (
            normalized == MANIFEST_NAME
        ):
            raise ValidationError(f'The artifact path "{relative_path}" is not allowed')
        staged = os.path.join(self.staging_dir, normalized)
        os.makedirs(os.path.dirname(staged), exist_ok=True)
        return staged

    def _staged_files(self):
        for root, _, files in os.walk(self.staging_dir):
            for name in files:
                yield os.path.relpath(os.path.join(root, name), self.staging_dir)

    def commit(self):
        """
        Move the staged artifacts into the output directory and write the manifest.

        :return: the manifest
        :rtype: dict
        """
        artifacts = []
        for relative_path in sorted(self._staged_files()):
            staged = os.path.join(self.staging_dir, relative_path)
            artifacts.append({
                'path': relative_path.replace(os.sep, '/'),
                'sha256': file_sha256(staged),
                'bytes': os.path.getsize(staged),
            })

        for artifact in artifacts:
            destination = os.path.join(self.output_dir, artifact['path'])
            os.makedirs(os.path.dirname(destination), exist_ok=True)
            os.replace(os.path.join(self.staging_dir, artifact['path']), destination)

        manifest = {
            'format': MANIFEST_FORMAT,
            'version': MANIFEST_VERSION,
            'subcommand': self.subcommand,
            'artifacts': artifacts,
        }
        staged_manifest = os.path.join(self.staging_dir, MANIFEST_NAME)
        with open(staged_manifest, 'w') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write('\n')
        os.replace(staged_manifest, os.path.join(self.output_dir, MANIFEST_NAME))
        log.info(
            'Wrote %d %s artifacts to %s', len(artifacts), self.subcommand, self.output_dir,
        )
        return manifest


def load_manifest(path):
    """
    Load and validate an artifact manifest.

    :param str path: the manifest path
    :return: the manifest
    :rtype: dict
    :raises ValidationError: if the manifest doesn't follow the schema
    """
    with open(path) as f:
        manifest = json.load(f)
    if not isinstance(manifest, dict) or manifest.get('format') != MANIFEST_FORMAT:
        raise ValidationError(f'The file {path} is not a canalatlas manifest')
    missing = {'version', 'subcommand', 'artifacts'} - set(manifest)
    if missing:
        raise ValidationError(
            'The manifest {} is missing the keys: {}'.format(path, ', '.join(sorted(missing)))
        )
    for artifact in manifest['artifacts']:
        if set(artifact) != {'path', 'sha256', 'bytes'} or len(artifact['sha256']) != 64:
            raise ValidationError(f'The manifest {path} has a malformed artifact entry')
    return manifest
