"""Binary embedding checkpoints.

Layout: a little-endian ``<4q`` header (n_users, n_items, dim, n_layers)
followed by the user table and then the item table as little-endian float64
in row-major order.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4q")
CHECKPOINT_PATTERN = "epoch_{epoch}.ckpt"


class CheckpointError(ValueError):
    """Raised when a checkpoint is unreadable or does not fit a dataset."""

    pass


@dataclass(frozen=True, slots=True)
class Checkpoint:
    user: np.ndarray
    item: np.ndarray
    n_layers: int

    @property
    def n_users(self) -> int:
        return int(self.user.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.item.shape[0])

    @property
    def dim(self) -> int:
        return int(self.user.shape[1])

    def check_compatible(self, n_users: int, n_items: int, dim: int | None = None) -> None:
        """
        Raises:
            CheckpointError: If the tables do not match the given sizes
        """
        mismatch = (
            self.n_users != n_users
            or self.n_items != n_items
            or (dim is not None and self.dim != dim)
        )
        if mismatch:
            expected_dim = self.dim if dim is None else dim
            raise CheckpointError(
                f"checkpoint has d={self.dim}, N={self.n_users}, M={self.n_items}; "
                f"expected d={expected_dim}, N={n_users}, M={n_items}"
            )


def checkpoint_path(run_dir: Path, epoch: int) -> Path:
    return run_dir / CHECKPOINT_PATTERN.format(epoch=epoch)


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> None:
    """Write ``checkpoint`` through a temporary file and an atomic rename."""
    if checkpoint.user.shape[1] != checkpoint.item.shape[1]:
        raise CheckpointError("user and item tables must have the same width")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(
            HEADER.pack(
                checkpoint.n_users, checkpoint.n_items, checkpoint.dim, checkpoint.n_layers
            )
        )
        fh.write(np.ascontiguousarray(checkpoint.user, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(checkpoint.item, dtype="<f8").tobytes())
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint {path}")


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Raises:
        FileNotFoundError: If ``path`` does not exist
        CheckpointError: If the header or payload size is inconsistent
    """
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise CheckpointError(f"{path} is too short to be a checkpoint")
    n_users, n_items, dim, n_layers = HEADER.unpack_from(raw)
    if min(n_users, n_items, dim, n_layers) < 0:
        raise CheckpointError(f"{path} has a corrupt header")
    expected = HEADER.size + 8 * dim * (n_users + n_items)
    if len(raw) != expected:
        raise CheckpointError(f"{path} holds {len(raw)} bytes, expected {expected}")
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    user = body[: n_users * dim].reshape(n_users, dim).astype(np.float64)
    item = body[n_users * dim :].reshape(n_items, dim).astype(np.float64)
    return Checkpoint(user=user, item=item, n_layers=n_layers)


def latest_checkpoint(run_dir: Path) -> Path | None:
    """Checkpoint with the highest epoch number in ``run_dir``."""
    found: list[tuple[int, Path]] = []
    for path in run_dir.glob("epoch_*.ckpt"):
        try:
            found.append((int(path.stem.split("_", 1)[1]), path))
        except ValueError:
            continue
    if not found:
        return None
    return max(found)[1]


def resolve_checkpoint(path: Path, named: str | None = None) -> Path:
    """
    Map a checkpoint file or a run directory to a checkpoint file.

    For a directory, ``named`` (the manifest's best checkpoint) wins when it
    exists; otherwise the highest-epoch checkpoint is used.

    Raises:
        FileNotFoundError: If nothing matches
    """
    if not path.is_dir():
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return path
    if named is not None and (path / named).exists():
        return path / named
    latest = latest_checkpoint(path)
    if latest is None:
        raise FileNotFoundError(f"checkpoint not found: no epoch_*.ckpt in {path}")
    logger.info(f"Using latest checkpoint {latest.name} in {path}")
    return latest
