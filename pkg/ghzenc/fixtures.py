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

import pytest

from ghzenc.ghz_conf import GhzConf, RunConfig
from ghzenc.propagator import SpectralCacheStore, cache_store
from ghzenc.protocol import ProtocolEngine, ProtocolParams
from ghzenc.utils import log, log_setup

# parameter set of the N=1024 encoding snapshot series (epsilon ~ 6.7e-4, T ~ 0.048)
SNAPSHOT_PARAMS = (1024, 2.0, 0.0505, 0.111, 0.0357)


# ----------------------------------------------------------------------------------------------------------------------
@pytest.fixture(scope='session', autouse=True)
def ghzenc_session_setup() -> None:
    """
    Configures ghzenc logging once per test session.
    """
    log_setup()
    log.info('ghzenc test session started')


# ----------------------------------------------------------------------------------------------------------------------
@pytest.fixture(scope='function')
def store() -> SpectralCacheStore:
    """
    The process-wide spectral cache registry, emptied before and after the test so that factorization counters
    start at zero.
    """
    st = cache_store()
    st.set_cache_dir(None)
    st.clear()
    yield st
    st.set_cache_dir(None)
    st.clear()


@pytest.fixture(scope='function')
def cache_dir(store, tmp_path) -> str:
    """
    A temporary on-disk spectral cache directory attached to the registry.
    """
    path = str(tmp_path / 'spectral')
    store.set_cache_dir(path)
    yield path


# ----------------------------------------------------------------------------------------------------------------------
@pytest.fixture(scope='session')
def snapshot_params() -> ProtocolParams:
    return ProtocolParams(*SNAPSHOT_PARAMS)


@pytest.fixture(scope='session')
def engine64() -> ProtocolEngine:
    return ProtocolEngine(64)


# ----------------------------------------------------------------------------------------------------------------------
@pytest.fixture(scope='function')
def run_config(tmp_path) -> RunConfig:
    """
    A run configuration writing into a temporary output directory. The configuration is installed as GhzConf default
    for the duration of the test.
    """
    orig = GhzConf.conf
    conf = RunConfig()
    conf.set(GhzConf.keys.out, str(tmp_path / 'out'))
    conf.set(GhzConf.keys.jobs, 1)
    GhzConf.use(conf)
    yield conf
    GhzConf.use(orig)


# ----------------------------------------------------------------------------------------------------------------------
def pytest_configure(config):
    # register markers with pytest
    config.addinivalue_line("markers", "slow: large-N runs (N >= 512 or full-space N >= 16)")
