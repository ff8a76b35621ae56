"""labfew: few-shot image classification from CIELab-grouped features.

Pipeline: sRGB images -> LLAB tensor (colorspace) -> two-group convolutional
encoder (labnet) -> coupled light/color graph classifier (labgnn), trained
episodically (episodic) on a numpy reverse-mode autodiff backend (tensor).
"""

__version__ = "0.1.0"


def _tune_allocator():
    """Keep glibc from returning large buffers to the OS between steps.

    Training re-allocates the same ~100 MB column/activation buffers every
    iteration; with default thresholds each round trips through mmap/munmap
    and the step becomes page-fault bound.
    """
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()

from .tensor import Tensor, no_grad  # noqa: E402

__all__ = ["Tensor", "no_grad", "__version__"]
