from dogpile.cache import make_region
from dogpile.cache.region import CacheRegion

region: CacheRegion = make_region()
"""Memoizes decoded feature files within one process"""

region.configure('dogpile.cache.memory')
