# vim: set tabstop=4 expandtab :
###############################################################################
#   Copyright (c) 2025 The ghzenc developers
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
###############################################################################

from __future__ import annotations  # available from Python 3.7 onwards, default from Python 3.11 onwards

import hashlib
import json
import logging
import os
import tempfile
from typing import Any

from ghzenc import __version__

log = logging.getLogger('GHZENC')


def log_setup(level: int = logging.DEBUG) -> None:
    # suppress log debug/info output on a general basis
    logging.getLogger().setLevel(logging.ERROR)
    # numerical libraries are chatty on DEBUG
    logging.getLogger('numpy').setLevel(logging.ERROR)
    logging.getLogger('scipy').setLevel(logging.ERROR)
    # configure ghzenc log level
    logging.getLogger('GHZENC').setLevel(level)


# -------------------------------------------------------------------------------------------------
# used as decorator to implement singleton pattern
def singleton(cls):
    instances = {}

    def _singleton(*args, **kw):
        if cls not in instances:
            instances[cls] = cls(*args, **kw)
        return instances[cls]

    return _singleton


# -------------------------------------------------------------------------------------------------
def fmt_float(val: float) -> str:
    """
    Canonical float representation used in all CSV artifacts. Thirteen significant digits survive parse/format round
    trips unchanged which keeps resumed tables byte-identical.
    """
    return f'{val:.12e}'


# -------------------------------------------------------------------------------------------------
def stable_hash(obj: Any) -> str:
    """
    Returns the SHA-256 hex digest of the canonical JSON form of obj (sorted keys, no whitespace).
    """
    data = json.dumps(obj, sort_keys=True, separators=(',', ':'), default=str).encode('utf-8')
    return hashlib.sha256(data).hexdigest()


def artifact_banner(config_hash: str) -> str:
    return f'# ghzenc {__version__} config={config_hash}'


# -------------------------------------------------------------------------------------------------
def write_atomic(path: str, data: bytes | str) -> None:
    """
    Writes data to path such that readers either see the old or the new file content, never a partial file.
    The temporary file is created in the destination folder so that the final rename stays on one file system.

    Args:
        path: Destination file.
        data: File content. str is written as UTF-8.
    """
    if isinstance(data, str):
        data = data.encode('utf-8')
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix='.ghzenc_', dir=folder)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
