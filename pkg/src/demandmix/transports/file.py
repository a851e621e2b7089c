import logging
import os
import tempfile
from pathlib import Path
from typing import Optional, Union

from demandmix.logging.exceptions import DemandMixException, InvalidInputException
from demandmix.transports.abstract_transport import AbstractTransport

LOG = logging.getLogger(__name__)


class FileTransport(AbstractTransport):
    """
    Objects are files in `base_path`; the id is the file name. Every write goes
    to a temporary file in the same directory and is renamed into place, so a
    reader never sees a half-written file.
    """

    def __init__(self, base_path: Union[str, Path] = ".", name: str = "File") -> None:
        super().__init__()
        self._name = name
        self.base_path = Path(base_path)
        self.saved_object_count = 0
        try:
            self.base_path.mkdir(parents=True, exist_ok=True)
        except OSError as ex:
            raise DemandMixException(
                f"FileTransport could not create {self.base_path}.", ex
            )

    def __repr__(self) -> str:
        return f"FileTransport(base_path: '{self.base_path}')"

    @property
    def name(self) -> str:
        return self._name

    @classmethod
    def for_file(cls, path: Union[str, Path]) -> "FileTransport":
        """The transport of the directory holding `path`."""
        return cls(Path(path).parent)

    def _path(self, id: str) -> Path:
        if Path(id).name != id:
            raise InvalidInputException(f"Object ids are plain file names, got {id}")
        return self.base_path / id

    def save_object(self, id: str, serialized_object: bytes) -> None:
        target = self._path(id)
        fd, tmp = tempfile.mkstemp(prefix=f".{id}.", dir=self.base_path)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(serialized_object)
            os.replace(tmp, target)
        except OSError as ex:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise DemandMixException(f"Could not write {target}.", ex)
        self.saved_object_count += 1
        LOG.debug("Wrote %d bytes to %s", len(serialized_object), target)

    def get_object(self, id: str) -> Optional[bytes]:
        path = self._path(id)
        if not path.is_file():
            return None
        return path.read_bytes()

    def begin_write(self) -> None:
        self.saved_object_count = 0

    def end_write(self) -> None:
        pass
