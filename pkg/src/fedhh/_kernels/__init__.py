"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is unavailable (or when FEDHH_FORCE_NUMPY=1 is set). Both
backends produce bit-identical results.
"""

import os

if os.environ.get("FEDHH_FORCE_NUMPY") == "1":
    from fedhh._kernels._numpy import *  # noqa: F401,F403
else:
    try:
        from fedhh._kernels._fastkern import *  # noqa: F401,F403
    except ImportError:
        from fedhh._kernels._numpy import *  # noqa: F401,F403
