from demandmix.serialization.draw_serializer import (
    FORMAT_VERSION,
    DrawArchive,
    DrawSerializer,
    hash_obj,
)

__all__ = ["FORMAT_VERSION", "DrawArchive", "DrawSerializer", "hash_obj"]
