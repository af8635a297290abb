"""Local download directory (survives restarts) and the in-memory index over it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

VIDEO_DIR = "downloads"
THUMBNAILS_SUBDIR = "downloads/thumbnails"


@dataclass(frozen=True)
class AssetHandle:
    """Reference to a simulated file; payload bytes are never materialized."""

    path: str
    size: int
    content_key: str


class LocalDisk:
    def __init__(self) -> None:
        self.files: dict[str, AssetHandle] = {}

    def write(self, path: str, size: int, content_key: str) -> AssetHandle:
        handle = AssetHandle(path, int(size), content_key)
        self.files[path] = handle
        return handle

    def remove(self, path: str) -> None:
        self.files.pop(path, None)

    def exists(self, path: str) -> bool:
        return path in self.files

    def listdir(self, prefix: str) -> list[AssetHandle]:
        prefix = prefix.rstrip("/") + "/"
        return [h for p, h in sorted(self.files.items())
                if p.startswith(prefix) and "/" not in p[len(prefix):]]

    @staticmethod
    def video_path(video_id: str) -> str:
        return f"{VIDEO_DIR}/{video_id}.mp4"

    @staticmethod
    def thumbnail_path(video_id: str) -> str:
        return f"{THUMBNAILS_SUBDIR}/{video_id}.jpg"


class DownloadIndex:
    """The process's view of what is on disk, rebuilt by :meth:`rebuild`."""

    def __init__(self) -> None:
        self.video_paths: dict[str, AssetHandle] = {}
        self.thumbnail_paths: dict[str, AssetHandle] = {}
        self.used_space = 0

    def rebuild(self, disk: LocalDisk) -> int:
        self.__init__()
        for handle in disk.listdir(VIDEO_DIR):
            vid = handle.path.rsplit("/", 1)[1].rsplit(".", 1)[0]
            self.video_paths[vid] = handle
            self.used_space += handle.size
        for handle in disk.listdir(THUMBNAILS_SUBDIR):
            vid = handle.path.rsplit("/", 1)[1].rsplit(".", 1)[0]
            self.thumbnail_paths[vid] = handle
            self.used_space += handle.size
        return len(self.video_paths)

    def record(self, video_id: str, video: AssetHandle, thumbnail: Optional[AssetHandle]) -> None:
        self.video_paths[video_id] = video
        self.used_space += video.size
        if thumbnail is not None:
            self.thumbnail_paths[video_id] = thumbnail
            self.used_space += thumbnail.size

    def has(self, video_id: str) -> bool:
        return video_id in self.video_paths and video_id in self.thumbnail_paths

    def forget(self, video_id: str, disk: LocalDisk) -> None:
        for table in (self.video_paths, self.thumbnail_paths):
            handle = table.pop(video_id, None)
            if handle is not None:
                self.used_space -= handle.size
                disk.remove(handle.path)
