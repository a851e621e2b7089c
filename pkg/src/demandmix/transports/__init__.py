from demandmix.transports.abstract_transport import AbstractTransport
from demandmix.transports.file import FileTransport

__all__ = ["AbstractTransport", "FileTransport"]
