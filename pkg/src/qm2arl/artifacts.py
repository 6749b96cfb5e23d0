"""Really simple artifact output.

Every file is written to a temporary name in its target directory and
then renamed into place, so a reader never sees a half-written file.
CSV files get a header row and LF line endings.
"""
import csv
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, List, Sequence, TextIO, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@contextmanager
def atomic_open(path: PathLike) -> Iterator[TextIO]:
    """Open `path` for text writing; the file appears only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", dir=path.parent, prefix=f".{path.name}.", delete=False, newline=""
    )
    try:
        with handle:
            yield handle
        os.replace(handle.name, path)
    except BaseException:
        os.unlink(handle.name)
        raise


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with atomic_open(path) as out:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path: PathLike, document: Any) -> None:
    with atomic_open(path) as out:
        json.dump(document, out, indent=2)
        out.write("\n")


def write_jsonl(path: PathLike, records: Iterable[Any]) -> None:
    with atomic_open(path) as out:
        for record in records:
            out.write(json.dumps(record) + "\n")


@dataclass
class RunArtifacts:
    """Output directory of one command, remembering what it emitted"""

    out_dir: Path
    emitted: List[str] = field(default_factory=list)

    def path(self, name: str) -> Path:
        return Path(self.out_dir) / name

    def record(self, name: str) -> Path:
        """Note a file written to `path(name)` by other means."""
        self.emitted.append(name)
        logger.info("wrote %s", self.path(name))
        return self.path(name)

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        write_csv(self.path(name), header, rows)
        return self.record(name)

    def json(self, name: str, document: Any) -> Path:
        write_json(self.path(name), document)
        return self.record(name)

    def jsonl(self, name: str, records: Iterable[Any]) -> Path:
        write_jsonl(self.path(name), records)
        return self.record(name)

    def manifest(self, command: str, config: Any, version: str) -> Path:
        """Write manifest.json listing the resolved config and every artifact."""
        return self.json(
            "manifest.json",
            {
                "command": command,
                "version": version,
                "config": config,
                "artifacts": list(self.emitted),
            },
        )
