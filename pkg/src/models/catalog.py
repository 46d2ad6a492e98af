"""
Column catalog: feature instance identity to sparse design-matrix column
"""

from dataclasses import dataclass

from src.models.clustering import ClusterModel
from src.models.features import FeatureDescriptor, FeatureLevel
from src.utils.errors import CatalogError


def fallback_key(level: FeatureLevel, part: int) -> str:
    """Shared column for rare or unseen instances; combos fall back per part"""
    if level is FeatureLevel.TAG_COMBO:
        return f"rare:part{part}"
    return "rare"


@dataclass(frozen=True)
class ColumnCatalog:
    """Injective map from (descriptor index, instance key) to column index"""

    shared: dict[int, int]
    instances: dict[tuple[int, str], int]
    fallbacks: dict[tuple[int, str], int]
    names: tuple[str, ...]
    clusters: ClusterModel | None = None

    @property
    def n_columns(self) -> int:
        return len(self.names)

    def column(self, index: int, descriptor: FeatureDescriptor, key: str, part: int) -> int:
        """Column for one descriptor at one level instance"""

        if not descriptor.instance_based:
            return self.shared[index]
        column = self.instances.get((index, key))
        if column is not None:
            return column
        if descriptor.fallback:
            column = self.fallbacks.get((index, fallback_key(descriptor.level, part)))
            if column is not None:
                return column
        raise CatalogError(f"{descriptor.name}: instance '{key}' not in catalog and no fallback")
