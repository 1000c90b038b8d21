"""Process-wide knobs: FFT worker count.

The CLI caps workers with --threads; library users may call
set_num_threads directly.  The default comes from SCBF_DEFAULT_THREADS.
"""

import os

_threads = None


def set_num_threads(n):
    global _threads
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def get_num_threads():
    global _threads
    if _threads is None:
        env = os.environ.get("SCBF_DEFAULT_THREADS", "")
        try:
            _threads = max(1, int(env))
        except ValueError:
            _threads = 1
    return _threads
