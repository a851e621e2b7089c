from demandmix import objects

__all__ = ["objects"]
