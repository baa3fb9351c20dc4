"""File formats: CSV tables, JSON documents, the HMM container and run manifests."""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from mchmm.config import APP_VERSION, GIT_BRANCH, GIT_COMMIT
from mchmm.core.errors import ConfigError
from mchmm.core.simulation import ObservationSeries, Trajectory
from mchmm.hmm.model import HmmModel, build_hmm
from mchmm.hmm.skeleton import EmissionTable, SkeletonMatrix

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def code_version() -> str:
    if GIT_COMMIT:
        return f"{APP_VERSION}+{GIT_COMMIT} ({GIT_BRANCH})"
    return APP_VERSION


class RunManifest(BaseModel):
    """Everything needed to rerun a subcommand and find what it wrote."""
    subcommand: str
    config: dict[str, Any]
    seed: Optional[int] = None
    code_version: str = Field(default_factory=code_version)
    started_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: Optional[str] = None
    outputs: list[str] = Field(default_factory=list)

    def finish(self, out_dir: Path) -> Path:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        path = out_dir / MANIFEST_NAME
        path.write_text(self.model_dump_json(indent=2))
        return path


def read_json(path: Union[str, Path]) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"File not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON in {path}: {exc}") from exc


def write_json(path: Path, document: Union[BaseModel, dict], manifest: Optional[str] = MANIFEST_NAME) -> Path:
    data = document.model_dump(by_alias=True) if isinstance(document, BaseModel) else dict(document)
    if manifest:
        data = {"manifest": manifest, **data}
    path.write_text(json.dumps(data, indent=2, default=_json_default))
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialise {type(value).__name__}")


def _read_csv(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"File not found: {path}")
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"Cannot read {path}: {exc}") from exc


def write_observations(path: Path, obs: ObservationSeries) -> Path:
    obs.to_frame().to_csv(path, index=False)
    return path


def read_observations(path: Union[str, Path], dt: float) -> ObservationSeries:
    return ObservationSeries.from_frame(_read_csv(path), dt)


def write_trajectory(path: Path, traj: Trajectory) -> Path:
    traj.to_frame().to_csv(path, index=False, float_format="%.17g")
    return path


def read_trajectory(path: Union[str, Path]) -> Trajectory:
    return Trajectory.from_frame(_read_csv(path))


def write_frame(path: Path, frame: pd.DataFrame) -> Path:
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


class HmmContainer(BaseModel):
    """Flattened HMM arrays in row-major (e, i, ...) order."""
    n_state: int
    m_obs: int
    shape: tuple[int, int]
    skeleton: list[float]
    psi: list[float]
    pi: list[float]


def hmm_container(h: HmmModel) -> HmmContainer:
    return HmmContainer(
        n_state=h.n_state,
        m_obs=h.m_obs,
        shape=h.shape,
        skeleton=h.skeleton.probs.ravel().tolist(),
        psi=h.psi.probs.ravel().tolist(),
        pi=h.pi.ravel().tolist(),
    )


def load_hmm(path: Union[str, Path], dt: float = 1.0) -> HmmModel:
    try:
        box = HmmContainer.model_validate(read_json(path))
    except ValidationError as exc:
        raise ConfigError(f"Invalid HMM container {path}: {exc}") from exc
    ke, ki = box.shape
    skeleton = SkeletonMatrix(probs=np.array(box.skeleton).reshape(ke, ki, ke, ki), dt=dt, corrected=True)
    psi = EmissionTable(probs=np.array(box.psi).reshape(ke, ki, ki, box.m_obs + 1), corrected=True)
    return build_hmm(skeleton, psi, np.array(box.pi).reshape(ke, ki))
