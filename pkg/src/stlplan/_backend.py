"""Array-namespace dispatch so the same numerics run on numpy or jax arrays."""
import numpy as np


def is_jax(a):
    return type(a).__module__.startswith("jax")


def namespace(*arrays):
    """Return jax.numpy if any argument is a jax array or tracer, else numpy."""
    for a in arrays:
        if is_jax(a):
            import jax.numpy as jnp
            return jnp
    return np


def cummin(a, xp):
    # running minimum along the last axis
    if xp is np:
        return np.minimum.accumulate(a, axis=-1)
    import jax
    return jax.lax.cummin(a, axis=a.ndim - 1)


def cumlogsumexp(a, xp):
    # running log-sum-exp along the last axis
    if xp is np:
        return np.logaddexp.accumulate(a, axis=-1)
    import jax
    return jax.lax.cumlogsumexp(a, axis=a.ndim - 1)


def cummax_int(a, xp):
    if xp is np:
        return np.maximum.accumulate(a, axis=-1)
    import jax
    return jax.lax.cummax(a, axis=a.ndim - 1)
