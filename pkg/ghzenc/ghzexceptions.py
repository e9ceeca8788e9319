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

class GhzException(Exception):
    pass


class GhzConfigException(GhzException):
    pass


class GhzCapacityException(GhzException):
    pass


class GhzNumericException(GhzException):
    """
    Raised when a numerical kernel fails to deliver the requested accuracy. The achieved residual is kept so callers
    can report it.
    """
    def __init__(self, msg: str, residual: float | None = None) -> None:
        super().__init__(msg)
        self.residual = residual
