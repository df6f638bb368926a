from typing import TYPE_CHECKING
from typing import Type

import pluggy

if TYPE_CHECKING:
    from .distributions import PixelDistribution

project_name = "darkproxy"

hookspec = pluggy.HookspecMarker(project_name)
hookimpl = pluggy.HookimplMarker(project_name)


@hookspec
def darkproxy_pixel_distributions() -> list[Type["PixelDistribution"]]:
    """Pixel-wise noise distribution families provided by a plugin"""
    raise NotImplementedError
