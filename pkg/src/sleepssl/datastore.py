"""On-disk dataset format, label handling, and a synthetic stage-structured
EEG generator for desk-scale end-to-end runs.

Native layout of a dataset directory::

    dataset.json          manifest (id, channels, rate, entries, version)
    <recording>.f32       raw little-endian float32, C-major (C x N flattened)
    <recording>.hyp       optional hypnogram, one integer stage per line
    exclusions.json       per-recording counts of dropped epochs (after ingest)

Stage codes 8 (disconnection) and -2 (artifact) are excluded at load time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sigproc import EPOCH_SECONDS, Recording

FORMAT_VERSION = 1

WAKE, N1, N2, N3, REM = 0, 1, 2, 3, 4
STAGE_NAMES = {WAKE: "Wake", N1: "N1", N2: "N2", N3: "N3", REM: "REM"}
VALID_STAGES = frozenset(STAGE_NAMES)
EXCLUDED_CODES = frozenset({8, -2})


@dataclass
class RecordingEntry:
    id: str
    path: str
    n_samples: int
    has_labels: bool


@dataclass
class DatasetManifest:
    dataset_id: str
    channels: list[str]
    rate_hz: float
    entries: list[RecordingEntry]
    version: int = FORMAT_VERSION


@dataclass
class Dataset:
    """A validated on-disk dataset. Immutable after ingestion."""

    root: Path
    manifest: DatasetManifest
    # per recording id: epoch indices dropped for stage codes 8 / -2
    exclusions: dict[str, list[int]] = field(default_factory=dict)

    @property
    def recording_ids(self) -> list[str]:
        return [e.id for e in self.manifest.entries]

    @property
    def labeled(self) -> bool:
        return all(e.has_labels for e in self.manifest.entries)

    def entry(self, rec_id: str) -> RecordingEntry:
        for e in self.manifest.entries:
            if e.id == rec_id:
                return e
        raise KeyError(f"no recording {rec_id!r} in dataset {self.manifest.dataset_id}")

    def load_signal(self, rec_id: str, mmap: bool = True) -> np.ndarray:
        entry = self.entry(rec_id)
        c = len(self.manifest.channels)
        path = self.root / entry.path
        if mmap:
            arr = np.memmap(path, dtype="<f4", mode="r", shape=(c, entry.n_samples))
        else:
            arr = np.fromfile(path, dtype="<f4").reshape(c, entry.n_samples)
        return arr

    def load_recording(self, rec_id: str) -> Recording:
        entry = self.entry(rec_id)
        labels = self.load_labels(rec_id) if entry.has_labels else None
        return Recording(
            id=rec_id,
            channels=list(self.manifest.channels),
            rate_hz=self.manifest.rate_hz,
            samples=np.array(self.load_signal(rec_id), dtype=np.float64),
            labels=labels,
        )

    def load_labels(self, rec_id: str) -> list[int] | None:
        """Raw hypnogram for one recording (before exclusion filtering)."""
        entry = self.entry(rec_id)
        if not entry.has_labels:
            return None
        hyp = self.root / (Path(entry.path).stem + ".hyp")
        return [int(line) for line in hyp.read_text().split()]

    def epoch_index(self, rec_id: str) -> list[tuple[int, int | None]]:
        """Retained (epoch position, label) pairs for one recording.

        Epochs whose stage code is 8 or -2 are dropped; positions refer to
        the raw 30-s grid so the signal offset is position * 30 * rate.
        """
        entry = self.entry(rec_id)
        spe = int(round(EPOCH_SECONDS * self.manifest.rate_hz))
        n_epochs = entry.n_samples // spe
        labels = self.load_labels(rec_id)
        out = []
        for i in range(n_epochs):
            if labels is None:
                out.append((i, None))
                continue
            code = labels[i]
            if code in EXCLUDED_CODES:
                continue
            if code not in VALID_STAGES:
                raise ValueError(f"recording {rec_id}: unknown stage code {code} at epoch {i}")
            out.append((i, code))
        return out


def _write_manifest(root: Path, manifest: DatasetManifest) -> None:
    payload = {
        "dataset_id": manifest.dataset_id,
        "channels": manifest.channels,
        "rate_hz": manifest.rate_hz,
        "version": manifest.version,
        "entries": [
            {"id": e.id, "path": e.path, "n_samples": e.n_samples, "has_labels": e.has_labels}
            for e in manifest.entries
        ],
    }
    (root / "dataset.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def open_dataset(root: str | Path) -> Dataset:
    """Load and validate a dataset directory."""
    root = Path(root)
    manifest_path = root / "dataset.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no dataset.json under {root}")
    raw = json.loads(manifest_path.read_text())
    manifest = DatasetManifest(
        dataset_id=raw["dataset_id"],
        channels=raw["channels"],
        rate_hz=raw["rate_hz"],
        version=raw["version"],
        entries=[RecordingEntry(**e) for e in raw["entries"]],
    )
    c = len(manifest.channels)
    exclusions: dict[str, list[int]] = {}
    for entry in manifest.entries:
        path = root / entry.path
        if not path.exists():
            raise FileNotFoundError(f"missing signal file {path}")
        expected = c * entry.n_samples * 4
        actual = path.stat().st_size
        if actual != expected:
            raise ValueError(
                f"corrupted signal file {path}: {actual} bytes, expected {expected}"
            )
        if entry.has_labels:
            hyp = root / (Path(entry.path).stem + ".hyp")
            if not hyp.exists():
                raise FileNotFoundError(f"missing hypnogram {hyp}")
            labels = [int(line) for line in hyp.read_text().split()]
            spe = int(round(EPOCH_SECONDS * manifest.rate_hz))
            n_epochs = entry.n_samples // spe
            if len(labels) != n_epochs:
                raise ValueError(
                    f"hypnogram {hyp}: {len(labels)} lines for {n_epochs} epochs"
                )
            for code in labels:
                if code not in VALID_STAGES and code not in EXCLUDED_CODES:
                    raise ValueError(f"hypnogram {hyp}: unknown stage code {code}")
            exclusions[entry.id] = [
                i for i, code in enumerate(labels) if code in EXCLUDED_CODES
            ]
    return Dataset(root=root, manifest=manifest, exclusions=exclusions)


def ingest(recordings: list[Recording], dataset_id: str, root: str | Path) -> Dataset:
    """Write recordings into the native format and return the opened dataset."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if not recordings:
        raise ValueError("cannot ingest an empty recording list")
    channels = recordings[0].channels
    rate = recordings[0].rate_hz
    entries = []
    for rec in recordings:
        if rec.channels != channels:
            raise ValueError(f"recording {rec.id}: channel set differs from dataset")
        if rec.rate_hz != rate:
            raise ValueError(f"recording {rec.id}: rate {rec.rate_hz} differs from {rate}")
        fname = f"{rec.id}.f32"
        rec.samples.astype("<f4").tofile(root / fname)
        if rec.labels is not None:
            (root / f"{rec.id}.hyp").write_text("\n".join(str(s) for s in rec.labels) + "\n")
        entries.append(RecordingEntry(
            id=rec.id, path=fname, n_samples=rec.n_samples,
            has_labels=rec.labels is not None,
        ))
    manifest = DatasetManifest(dataset_id=dataset_id, channels=list(channels),
                               rate_hz=rate, entries=entries)
    _write_manifest(root, manifest)
    ds = open_dataset(root)
    report = {rid: len(idx) for rid, idx in ds.exclusions.items() if idx}
    (root / "exclusions.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return ds


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

# per-stage oscillation recipe: list of (low_hz, high_hz, amplitude) bands
# plus a white-noise floor; amplitudes chosen so band power separates stages
STAGE_SPECTRA = {
    WAKE: {"bands": [(8.0, 12.0, 1.0)], "noise": 0.25},
    N1: {"bands": [(4.0, 8.0, 0.7)], "noise": 0.25},
    N2: {"bands": [(4.0, 8.0, 0.5), (11.0, 16.0, 0.9)], "noise": 0.25},
    N3: {"bands": [(0.5, 4.0, 2.0)], "noise": 0.25},
    REM: {"bands": [(4.0, 8.0, 0.35)], "noise": 0.15},
}

DEFAULT_TRANSITIONS = np.array([
    # Wake  N1    N2    N3    REM
    [0.80, 0.15, 0.03, 0.01, 0.01],  # Wake
    [0.05, 0.60, 0.30, 0.02, 0.03],  # N1
    [0.02, 0.05, 0.75, 0.13, 0.05],  # N2
    [0.01, 0.02, 0.17, 0.78, 0.02],  # N3
    [0.04, 0.05, 0.10, 0.01, 0.80],  # REM
])


@dataclass
class SynthConfig:
    n_recordings: int = 40
    epochs_per_recording: int = 960
    rate_hz: float = 256.0
    channels: tuple[str, str] = ("AF7", "AF8")
    transitions: np.ndarray = field(default_factory=lambda: DEFAULT_TRANSITIONS.copy())
    seed: int = 0

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        if self.transitions.shape != (5, 5):
            raise ValueError("transition matrix must be 5 x 5")
        if not np.allclose(self.transitions.sum(axis=1), 1.0):
            raise ValueError("transition matrix rows must sum to 1")


def stationary_distribution(transitions: np.ndarray) -> np.ndarray:
    """Left eigenvector of the transition matrix for eigenvalue 1, normalized."""
    vals, vecs = np.linalg.eig(transitions.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, idx])
    return v / v.sum()


def _stage_epoch(stage: int, t: int, rate_hz: float, rng: np.random.Generator) -> np.ndarray:
    spec = STAGE_SPECTRA[stage]
    time = np.arange(t) / rate_hz
    x = np.zeros((2, t))
    for low, high, amp in spec["bands"]:
        for _ in range(3):
            freq = rng.uniform(low, high)
            phase = rng.uniform(0, 2 * np.pi)
            tone = np.sin(2 * np.pi * freq * time + phase)
            # slight inter-channel asymmetry, as for real frontal electrodes
            scale = rng.uniform(0.85, 1.15, size=2)
            x += amp / 3.0 * scale[:, None] * tone[None, :]
    x += rng.normal(0.0, spec["noise"], size=x.shape)
    return x


def generate_synthetic(config: SynthConfig, root: str | Path,
                       dataset_id: str = "synthetic") -> Dataset:
    """Generate a labeled two-channel dataset with Markov stage structure."""
    rng = np.random.default_rng(config.seed)
    t = int(round(EPOCH_SECONDS * config.rate_hz))
    recordings = []
    for r in range(config.n_recordings):
        stages = np.empty(config.epochs_per_recording, dtype=int)
        stages[0] = WAKE
        for i in range(1, config.epochs_per_recording):
            stages[i] = rng.choice(5, p=config.transitions[stages[i - 1]])
        sig = np.empty((2, config.epochs_per_recording * t))
        for i, stage in enumerate(stages):
            sig[:, i * t : (i + 1) * t] = _stage_epoch(int(stage), t, config.rate_hz, rng)
        recordings.append(Recording(
            id=f"rec{r:03d}",
            channels=list(config.channels),
            rate_hz=config.rate_hz,
            samples=sig,
            labels=[int(s) for s in stages],
        ))
    return ingest(recordings, dataset_id, root)


# ---------------------------------------------------------------------------
# streaming
# ---------------------------------------------------------------------------

def stream_unlabeled(dataset: Dataset, rec_ids: list[str] | None = None,
                     shuffle_seed: int | None = None):
    """Yield (rec_id, epoch_position) pairs over retained epochs.

    Signal data is read lazily by the consumer through ``epoch_array``.
    """
    ids = rec_ids if rec_ids is not None else dataset.recording_ids
    items = [(rid, pos) for rid in ids for pos, _ in dataset.epoch_index(rid)]
    if shuffle_seed is not None:
        rng = np.random.default_rng(shuffle_seed)
        rng.shuffle(items)
    yield from items


def epoch_array(dataset: Dataset, rec_id: str, position: int) -> np.ndarray:
    """C x T float array for one 30-s epoch of a recording."""
    spe = int(round(EPOCH_SECONDS * dataset.manifest.rate_hz))
    sig = dataset.load_signal(rec_id)
    return np.array(sig[:, position * spe : (position + 1) * spe], dtype=np.float64)


@dataclass
class Window:
    """L consecutive retained epochs of one recording, with labels and a
    validity mask (False marks tail padding)."""

    rec_id: str
    positions: np.ndarray  # length L, raw epoch positions
    labels: np.ndarray | None  # length L int, or None for unlabeled data
    valid: np.ndarray  # length L bool


def stream_windows(dataset: Dataset, window: int, rec_ids: list[str] | None = None,
                   require_labels: bool = True) -> list[Window]:
    """Non-overlapping windows of L retained epochs per recording.

    Windows never cross recording boundaries; a partial tail window is padded
    by repeating the last epoch, with padded positions masked out.
    """
    ids = rec_ids if rec_ids is not None else dataset.recording_ids
    windows = []
    for rid in ids:
        index = dataset.epoch_index(rid)
        if require_labels and any(lbl is None for _, lbl in index):
            raise ValueError(f"recording {rid} has no labels")
        for start in range(0, len(index), window):
            chunk = index[start : start + window]
            n_real = len(chunk)
            if n_real == 0:
                continue
            while len(chunk) < window:
                chunk = chunk + [chunk[-1]]
            positions = np.array([pos for pos, _ in chunk])
            labels = None
            if chunk[0][1] is not None:
                labels = np.array([lbl for _, lbl in chunk])
            valid = np.zeros(window, dtype=bool)
            valid[:n_real] = True
            windows.append(Window(rec_id=rid, positions=positions, labels=labels, valid=valid))
    return windows


def window_signal(dataset: Dataset, w: Window) -> np.ndarray:
    """L x C x T array for a window, read from the memory-mapped signal."""
    spe = int(round(EPOCH_SECONDS * dataset.manifest.rate_hz))
    sig = dataset.load_signal(w.rec_id)
    out = np.empty((len(w.positions), sig.shape[0], spe), dtype=np.float64)
    for i, pos in enumerate(w.positions):
        out[i] = sig[:, pos * spe : (pos + 1) * spe]
    return out
