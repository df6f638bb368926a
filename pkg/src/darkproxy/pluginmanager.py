from typing import TYPE_CHECKING
from typing import Type

import pluggy

from . import distributions
from . import hookspec

if TYPE_CHECKING:
    from .distributions import PixelDistribution


class DarkProxyPluginManager(pluggy.PluginManager):
    """Registers the built-in distribution families, then any installed under the
    ``darkproxy`` entry-point group"""

    def __init__(self):
        super().__init__(hookspec.project_name)
        self.add_hookspecs(hookspec)
        self.register(distributions)
        self.load_setuptools_entrypoints(hookspec.project_name)

    def distribution_families(self) -> list[Type["PixelDistribution"]]:
        families: list[Type["PixelDistribution"]] = []
        for provided in self.hook.darkproxy_pixel_distributions():
            families.extend(provided or [])
        return families


_pm: DarkProxyPluginManager | None = None


def get_pluginmanager() -> DarkProxyPluginManager:
    global _pm
    if _pm is None:
        _pm = DarkProxyPluginManager()
    return _pm
