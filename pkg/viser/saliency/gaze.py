"""Eye-tracking fixations: calibration remapping, loading and heatmap rendering.

Coordinates are normalized to [0, 1] with (0, 0) the top-left image corner, `x` along
the width and `y` along the height.
"""
import enum
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from viser import utils
from viser.exceptions import ManifestParseError
from viser.saliency.maps import SaliencyMap, normalize_map

logger = logging.getLogger(__name__)

CLAMP_WARN_FRACTION = 0.2

GAZE_KEYS = ('sample_id', 'participant_id', 'phase', 't_ms', 'x', 'y', 'duration_ms')


class Phase(str, enum.Enum):
    """Viewing phase. `initial` fixations form the first-impression prefix of a session,
    `full` fixations the remainder of the viewing time.
    """
    initial = 'initial'
    full = 'full'


@dataclass(frozen=True)
class FixationRecord:
    x: float
    y: float
    duration: float
    participant_id: str
    phase: Phase = Phase.full
    t_ms: float = 0.
    out_of_frame: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"Fixation coordinates need to be finite, got ({self.x}, {self.y})")
        if not self.duration > 0:
            raise ValueError(f"Fixation duration needs to be positive, got {self.duration}")
        object.__setattr__(self, 'phase', Phase(self.phase))


def n_poly_terms(degree):
    return (degree + 1) * (degree + 2) // 2


def poly_terms(x, y, degree):
    """Monomials of a 2-D polynomial ordered by total degree, then by decreasing power of `x`:
    `[1, x, y, x^2, xy, y^2, x^3, ...]`.

    Returns:
        np.ndarray -- Array of shape (len(x), n_poly_terms(degree)).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    cols = []
    for total in range(degree + 1):
        for px in range(total, -1, -1):
            cols.append(x**px * y**(total - px))
    return np.stack(cols, axis=1)


@dataclass(frozen=True, eq=False)
class RemapCoefficients:
    """Per-participant calibration correction `(x', y') = (P_x(x, y), P_y(x, y))`.

    Coefficients follow the term order of `poly_terms`.
    """
    degree: int
    coeffs_x: np.ndarray
    coeffs_y: np.ndarray

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"Remap degree needs to be an integer >= 1, got {self.degree}")
        object.__setattr__(self, 'coeffs_x', np.asarray(self.coeffs_x, dtype=np.float64).reshape(-1))
        object.__setattr__(self, 'coeffs_y', np.asarray(self.coeffs_y, dtype=np.float64).reshape(-1))

    @classmethod
    def identity(cls, degree=1):
        cx = np.zeros(n_poly_terms(degree))
        cy = np.zeros(n_poly_terms(degree))
        cx[1] = 1.
        cy[2] = 1.
        return cls(degree, cx, cy)

    def check(self):
        n = n_poly_terms(self.degree)
        if len(self.coeffs_x) != n or len(self.coeffs_y) != n:
            raise ValueError(f"Degree {self.degree} remap needs {n} coefficients per axis, "
                             f"got {len(self.coeffs_x)} and {len(self.coeffs_y)}")

    def __call__(self, x, y):
        self.check()
        terms = poly_terms(x, y, self.degree)
        return terms @ self.coeffs_x, terms @ self.coeffs_y


@dataclass(frozen=True)
class GazeSession:
    """Fixations of one participant on one image, in time order."""
    sample_id: str
    participant_id: str
    fixations: Tuple[FixationRecord, ...]
    remap: RemapCoefficients = field(default_factory=RemapCoefficients.identity)

    def __post_init__(self):
        fixations = tuple(self.fixations)
        object.__setattr__(self, 'fixations', fixations)
        times = np.array([f.t_ms for f in fixations])
        if (np.diff(times) < 0).any():
            raise ValueError(f"Session ({self.sample_id!r}, {self.participant_id!r}) is not time ordered")
        others = {f.participant_id for f in fixations} - {self.participant_id}
        if others:
            raise ValueError(f"Session for participant {self.participant_id!r} holds fixations of {sorted(others)}")

    @property
    def n_out_of_frame(self):
        return sum(f.out_of_frame for f in self.fixations)

    def of_phase(self, phase):
        phase = Phase(phase)
        return [f for f in self.fixations if f.phase is phase]


def remap_fixations(session: GazeSession) -> GazeSession:
    """Apply the session's calibration polynomial to every fixation.

    Remapped coordinates are clamped to [0, 1]; clamped fixations get `out_of_frame=True`.
    The returned session carries identity coefficients, so remapping twice is harmless.
    """
    session.remap.check()
    if not session.fixations:
        return replace(session, remap=RemapCoefficients.identity())
    x = np.array([f.x for f in session.fixations])
    y = np.array([f.y for f in session.fixations])
    new_x, new_y = session.remap(x, y)
    outside = (new_x < 0) | (new_x > 1) | (new_y < 0) | (new_y > 1)
    new_x = np.clip(new_x, 0., 1.)
    new_y = np.clip(new_y, 0., 1.)
    fixations = tuple(replace(f, x=float(nx), y=float(ny), out_of_frame=bool(f.out_of_frame or out))
                      for f, nx, ny, out in zip(session.fixations, new_x, new_y, outside))
    frac = outside.mean()
    if frac > CLAMP_WARN_FRACTION:
        warnings.warn(f"{outside.sum()} of {len(outside)} fixations of participant {session.participant_id!r} "
                      f"on {session.sample_id!r} were clamped to the image frame.")
    return replace(session, fixations=fixations, remap=RemapCoefficients.identity())


def render_gaze_heatmap(fixations: List[FixationRecord], sigma_px: float, size, sample_id='', source=None,
                        normalize=True) -> SaliencyMap:
    """Duration-weighted sum of isotropic Gaussians centred at the fixations.

    Fixation `(x, y)` lands on pixel coordinates `(x * W - 0.5, y * H - 0.5)`, i.e. pixel
    centres sit at half-integer normalized positions.

    Arguments:
        fixations {list of FixationRecord} -- Fixations to render. May be empty.
        sigma_px {float} -- Gaussian standard deviation in pixels.
        size {tuple} -- (height, width).

    Keyword Arguments:
        sample_id {str} -- Sample id of the output map (default: {''})
        source {SaliencySource} -- Source tag of the output map (default: {None})
        normalize {bool} -- Max-normalize the result (default: {True})

    Returns:
        SaliencyMap -- The heatmap, flagged `empty` when there are no fixations.
    """
    if not sigma_px > 0:
        raise ValueError(f"`sigma_px` needs to be positive, got {sigma_px}")
    height, width = size
    if len(fixations) == 0:
        return SaliencyMap(np.zeros((height, width)), sample_id, source, empty=True)
    cols = np.array([f.x for f in fixations]) * width - 0.5
    rows = np.array([f.y for f in fixations]) * height - 0.5
    weights = np.array([f.duration for f in fixations], dtype=np.float64)
    gx = np.exp(-0.5 * ((np.arange(width)[None, :] - cols[:, None]) / sigma_px)**2)
    gy = np.exp(-0.5 * ((np.arange(height)[None, :] - rows[:, None]) / sigma_px)**2)
    heat = np.einsum('n,nh,nw->hw', weights, gy, gx)
    smap = SaliencyMap(heat, sample_id, source)
    return normalize_map(smap) if normalize else smap


def load_remap_coefficients(path) -> Dict[str, RemapCoefficients]:
    """Read the per-participant remap sidecar `{participant_id, degree, coeffs_x, coeffs_y}`."""
    out = {}
    for line_number, rec in utils.read_jsonl(path):
        try:
            out[str(rec['participant_id'])] = RemapCoefficients(int(rec['degree']), rec['coeffs_x'],
                                                                rec['coeffs_y'])
        except (KeyError, TypeError) as err:
            raise ManifestParseError(path, line_number, f"bad remap record ({err})") from None
    return out


def load_gaze_sessions(path, remaps=None) -> Dict[str, List[GazeSession]]:
    """Read fixation records and group them into sessions.

    Arguments:
        path {str, Path} -- Line-delimited records with keys
            `sample_id, participant_id, phase, t_ms, x, y, duration_ms`.

    Keyword Arguments:
        remaps {dict} -- Remap coefficients by participant. Participants without an entry
            get identity coefficients. (default: {None})

    Returns:
        dict -- Sessions by sample id, each list ordered by participant id.
    """
    remaps = remaps or {}
    rows = []
    for line_number, rec in utils.read_jsonl(path):
        missing = [key for key in GAZE_KEYS if key not in rec]
        if missing:
            raise ManifestParseError(path, line_number, f"missing keys {missing}")
        rows.append(rec)
    if not rows:
        return {}
    df = pd.DataFrame(rows, columns=list(GAZE_KEYS))
    df['sample_id'] = df['sample_id'].astype(str)
    df['participant_id'] = df['participant_id'].astype(str)
    df = df.sort_values(['sample_id', 'participant_id', 't_ms'], kind='mergesort')
    sessions = defaultdict(list)
    for (sample_id, participant_id), group in df.groupby(['sample_id', 'participant_id'], sort=True):
        fixations = tuple(FixationRecord(x=float(r.x), y=float(r.y), duration=float(r.duration_ms),
                                         participant_id=participant_id, phase=Phase(r.phase), t_ms=float(r.t_ms))
                          for r in group.itertuples(index=False))
        remap = remaps.get(participant_id, RemapCoefficients.identity())
        sessions[sample_id].append(GazeSession(sample_id, participant_id, fixations, remap))
    logger.info("loaded gaze sessions", extra=dict(path=str(path), n_samples=len(sessions),
                                                   n_fixations=len(df)))
    return dict(sessions)


def write_gaze_sessions(path, sessions):
    """Write sessions in the format read by `load_gaze_sessions` (remaps are not written)."""
    records = [dict(sample_id=s.sample_id, participant_id=s.participant_id, phase=f.phase.value, t_ms=f.t_ms,
                    x=f.x, y=f.y, duration_ms=f.duration)
               for s in sessions for f in s.fixations]
    return utils.write_jsonl(path, records)


def write_remap_coefficients(path, remaps):
    records = [dict(participant_id=pid, degree=r.degree, coeffs_x=r.coeffs_x.tolist(), coeffs_y=r.coeffs_y.tolist())
               for pid, r in remaps.items()]
    return utils.write_jsonl(path, records)
