import copy
from typing import Any


def merge(dest: Any, source: Any) -> Any:
    """Merge ``source`` into ``dest``; entries in ``source`` take precedence.

    Mappings are merged recursively.  Sequences and scalars from ``source`` replace those in
    ``dest`` wholesale, so an ISO list given in a local config overrides the site list rather
    than extending it.  ``dest`` may be modified in place; always use the return value::

       dest = merge(dest, source)

    """
    if source is None:
        return dest

    if isinstance(dest, dict) and isinstance(source, dict):
        for key, value in source.items():
            if key in dest and isinstance(dest[key], dict) and isinstance(value, dict):
                dest[key] = merge(dest[key], value)
            else:
                dest[key] = copy.deepcopy(value)
        return dest

    return copy.deepcopy(source)


def int_keys(mapping: dict[Any, Any]) -> dict[int, Any]:
    """Return ``mapping`` with keys coerced to ``int`` (YAML and JSON may hand back strings)"""
    return {int(k): v for k, v in mapping.items()}
