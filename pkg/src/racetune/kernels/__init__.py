"""Hot numeric kernels (numba-compiled unless ``RACETUNE_NUMBA=0``)."""
