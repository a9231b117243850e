"""Select the compiled kernels when available, else the pure-Python ones."""

import os

from . import _purepy

if os.environ.get("FASTRESUME_PURE_PYTHON"):
    _impl = _purepy
    BACKEND = "python"
else:
    try:
        from . import _speedups as _impl
    except ImportError:
        _impl = _purepy
        BACKEND = "python"
    else:
        BACKEND = "cython"

decode_fields = _impl.decode_fields
encode_fields = _impl.encode_fields
replay_accepts = _impl.replay_accepts
replay_update = _impl.replay_update

OK = _purepy.OK
ERR_SHORT = _purepy.ERR_SHORT
ERR_VERSION = _purepy.ERR_VERSION
ERR_TYPE = _purepy.ERR_TYPE
ERR_LENGTH = _purepy.ERR_LENGTH
