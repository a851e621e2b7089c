from abc import ABC, abstractmethod
from typing import Optional


class AbstractTransport(ABC):
    """A named store of binary blobs (draw archives, tables, grids) keyed by id."""

    @property
    @abstractmethod
    def name(self):
        pass

    @abstractmethod
    def begin_write(self) -> None:
        """Optional: signals to the transport that writes are about to begin."""
        pass

    @abstractmethod
    def end_write(self) -> None:
        """
        Optional: signals to the transport that no more items will need to be written.
        """
        pass

    @abstractmethod
    def save_object(self, id: str, serialized_object: bytes) -> None:
        """Saves the given payload, replacing any previous payload with that id.

        Arguments:
            id {str} -- the key of the object
            serialized_object {bytes} -- the full encoded object
        """
        pass

    @abstractmethod
    def get_object(self, id: str) -> Optional[bytes]:
        """Gets an object. Returns `None` if the object is not found."""
        pass
