try:
    from tomllib import loads  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    from tomli import loads

__all__ = ["loads"]
