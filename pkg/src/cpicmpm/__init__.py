"""Differentiable MPM with compatible particle-in-cell rigid-body collisions."""

import os

_threads = os.environ.get("AS_DIFFMPM_THREADS")
if _threads:
    # must be set before the XLA CPU client starts
    os.environ["XLA_FLAGS"] = (
        os.environ.get("XLA_FLAGS", "")
        + f" --xla_cpu_multi_thread_eigen={'false' if _threads == '1' else 'true'}"
        + f" intra_op_parallelism_threads={int(_threads)}"
    ).strip()
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

import jax  # noqa: E402

# Conservation checks and gradient oracles need double precision.
jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
