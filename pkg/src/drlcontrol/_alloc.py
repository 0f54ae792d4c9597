"""glibc allocator tuning for the training loop.

Each train step allocates a few dozen arrays of 100 KB-1 MB. Above glibc's
default 128 KB threshold every one is a fresh mmap that page-faults on first
touch, which costs more than the matmuls themselves on small VMs. Raising
the thresholds keeps those blocks on the heap and reuses them.
"""
import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_malloc(mmap_threshold=64 << 20, trim_threshold=256 << 20):
    global _done
    if _done:
        return True
    name = ctypes.util.find_library("c")
    if name is None:
        return False
    try:
        libc = ctypes.CDLL(name)
        ok = libc.mallopt(_M_MMAP_THRESHOLD, mmap_threshold) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, trim_threshold) == 1 and ok
    except (OSError, AttributeError):
        return False
    _done = ok
    return ok
