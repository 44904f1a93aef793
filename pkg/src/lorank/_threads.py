"""Worker-thread cap via the LORANK_THREADS environment variable.

BLAS backends read their thread settings at load time, so this module must
run before numpy is first imported; the package __init__ imports it first.
Values already set explicitly by the user are left alone.
"""

import os

_BLAS_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def apply_thread_cap() -> int | None:
    cap = os.environ.get("LORANK_THREADS")
    if not cap:
        return None
    try:
        value = str(max(1, int(cap)))
    except ValueError:
        return None
    for var in _BLAS_VARS:
        os.environ.setdefault(var, value)
    return int(value)


apply_thread_cap()
