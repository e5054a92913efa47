"""CirCor-style patient records: parsing and writing, per-recording labels,
patient-level stratified splits, fixed-length windows, and a synthetic PCG
generator that writes the same on-disk layout.
"""

from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .dsp import Waveform

SITES = ("AV", "PV", "TV", "MV", "Phc")
AGE_BANDS = ("Neonate", "Infant", "Child", "Adolescent", "Young Adult", "Unknown")
SEXES = ("Male", "Female")


class Murmur(str, Enum):
    PRESENT = "Present"
    UNKNOWN = "Unknown"
    ABSENT = "Absent"

    @property
    def class_index(self) -> int:
        return MURMUR_CLASSES.index(self)


class Outcome(str, Enum):
    ABNORMAL = "Abnormal"
    NORMAL = "Normal"

    @property
    def class_index(self) -> int:
        return OUTCOME_CLASSES.index(self)


MURMUR_CLASSES = (Murmur.PRESENT, Murmur.UNKNOWN, Murmur.ABSENT)
OUTCOME_CLASSES = (Outcome.ABNORMAL, Outcome.NORMAL)


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentInterval:
    start: float
    end: float
    state: int  # 0 unannotated, 1 S1, 2 systole, 3 S2, 4 diastole

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid interval [{self.start}, {self.end})")
        if self.state not in (0, 1, 2, 3, 4):
            raise ValueError(f"invalid segmentation state {self.state}")


@dataclass
class Recording:
    location: str
    waveform: Waveform
    murmur: Murmur
    segments: List[SegmentInterval] = field(default_factory=list)
    stem: Optional[str] = None  # file base name, e.g. "1234_AV"

    def __post_init__(self):
        if self.location not in SITES:
            raise ValueError(f"unknown auscultation location {self.location!r}")
        prev_end = -1.0
        for seg in self.segments:
            if seg.start < prev_end - 1e-9:
                raise ValueError(f"{self.location}: segmentation intervals overlap or are unsorted")
            prev_end = seg.end


@dataclass
class PatientRecord:
    id: str
    age: str
    sex: str
    pregnant: bool
    murmur: Murmur
    murmur_locations: Tuple[str, ...]
    outcome: Outcome
    recordings: List[Recording]
    extra: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.recordings:
            raise ValueError(f"patient {self.id} has no recordings")
        if self.murmur == Murmur.PRESENT:
            if not self.murmur_locations:
                raise ValueError(f"patient {self.id}: murmur present but no locations given")
            sites = {r.location for r in self.recordings}
            missing = set(self.murmur_locations) - sites
            if missing:
                raise ValueError(f"patient {self.id}: murmur locations {sorted(missing)} not recorded")

    @property
    def stratum(self) -> Tuple:
        return (self.age, self.sex, self.pregnant, self.murmur.value, self.outcome.value)


def derive_recording_murmur(patient_murmur: Murmur, murmur_locations: Iterable[str], site: str) -> Murmur:
    patient_murmur = Murmur(patient_murmur)
    if patient_murmur == Murmur.UNKNOWN:
        return Murmur.UNKNOWN
    if patient_murmur == Murmur.PRESENT and site in set(murmur_locations):
        return Murmur.PRESENT
    return Murmur.ABSENT


# ---------------------------------------------------------------------------
# file I/O


def read_wav(path: Union[str, Path]) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ParseError(f"{path}: expected mono 16-bit PCM")
        fs = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, fs)


def quantize(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path: Union[str, Path], w: Waveform) -> None:
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.fs)
        fh.writeframes(quantize(w.samples).tobytes())


def read_tsv(path: Union[str, Path]) -> List[SegmentInterval]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            start, end, state = float(parts[0]), float(parts[1]), int(float(parts[2]))
            out.append(SegmentInterval(start, end, state))
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: malformed segmentation line ({exc})") from None
    return out


def write_tsv(path: Union[str, Path], segments: Sequence[SegmentInterval]) -> None:
    lines = [f"{s.start:.6f}\t{s.end:.6f}\t{s.state}" for s in segments]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


_META_KEYS = {
    "Age": "age",
    "Sex": "sex",
    "Pregnancy status": "pregnant",
    "Murmur": "murmur",
    "Murmur locations": "murmur_locations",
    "Outcome": "outcome",
}


@dataclass
class Header:
    id: str
    fs: int
    entries: List[Tuple[str, str, Optional[str]]]  # (site, wav name, tsv name)
    age: str
    sex: str
    pregnant: bool
    murmur: Murmur
    murmur_locations: Tuple[str, ...]
    outcome: Outcome
    extra: Dict[str, str]


def parse_header(text: str) -> Header:
    """Parse the text of a ``<ID>.txt`` patient header (no file access)."""
    lines = text.splitlines()
    if not lines:
        raise ParseError("line 1: empty header")
    first = lines[0].split()
    if len(first) < 3:
        raise ParseError(f"line 1: expected '<ID> <num_locations> <fs>', got {lines[0]!r}")
    pid = first[0]
    try:
        n_loc, fs = int(first[1]), int(first[2])
    except ValueError:
        raise ParseError(f"line 1: non-integer location count or sampling rate in {lines[0]!r}") from None
    entries = []
    for i in range(n_loc):
        lineno = i + 2
        if lineno > len(lines):
            raise ParseError(f"line {lineno}: expected {n_loc} recording lines")
        tokens = lines[i + 1].split()
        if not tokens or tokens[0] not in SITES:
            raise ParseError(f"line {lineno}: unknown auscultation location in {lines[i + 1]!r}")
        wav = next((t for t in tokens[1:] if t.endswith(".wav")), None)
        tsv = next((t for t in tokens[1:] if t.endswith(".tsv")), None)
        if wav is None:
            raise ParseError(f"line {lineno}: no .wav file named in {lines[i + 1]!r}")
        entries.append((tokens[0], wav, tsv))

    meta: Dict[str, Tuple[int, str]] = {}
    extra = {}
    for lineno, line in enumerate(lines[n_loc + 1 :], n_loc + 2):
        if not line.strip():
            continue
        if not line.startswith("#") or ":" not in line:
            raise ParseError(f"line {lineno}: malformed metadata line {line!r}")
        key, value = line[1:].split(":", 1)
        key, value = key.strip(), value.strip()
        if key in _META_KEYS:
            meta[_META_KEYS[key]] = (lineno, value)
        else:
            extra[key] = value

    def field_value(name, vocab=None, default=None):
        if name not in meta:
            if default is not None:
                return default
            raise ParseError(f"missing '#{[k for k, v in _META_KEYS.items() if v == name][0]}:' line")
        lineno, value = meta[name]
        if vocab is not None and value not in vocab:
            raise ParseError(f"line {lineno}: {value!r} is not one of {list(vocab)}")
        return value

    age = field_value("age", default="Unknown")
    if age.lower() == "nan":
        age = "Unknown"
    if age not in AGE_BANDS:
        raise ParseError(f"line {meta['age'][0]}: {age!r} is not one of {list(AGE_BANDS)}")
    sex = field_value("sex", SEXES)
    pregnant = field_value("pregnant", ("True", "False"), default="False") == "True"
    murmur = Murmur(field_value("murmur", [m.value for m in Murmur]))
    outcome = Outcome(field_value("outcome", [o.value for o in Outcome]))
    locs_raw = field_value("murmur_locations", default="nan")
    if locs_raw.lower() == "nan" or not locs_raw:
        locations: Tuple[str, ...] = ()
    else:
        locations = tuple(locs_raw.split("+"))
        bad = [s for s in locations if s not in SITES]
        if bad:
            raise ParseError(f"line {meta['murmur_locations'][0]}: unknown locations {bad}")
    return Header(pid, fs, entries, age, sex, pregnant, murmur, locations, outcome, extra)


def parse_patient(header_text: str, wav_dir: Union[str, Path]) -> PatientRecord:
    """Build a patient record from header text, loading its wav/tsv files from ``wav_dir``."""
    h = parse_header(header_text)
    wav_dir = Path(wav_dir)
    recordings = []
    for site, wav_name, tsv_name in h.entries:
        wav_path = wav_dir / wav_name
        if not wav_path.is_file():
            raise FileNotFoundError(f"patient {h.id}: missing recording {wav_path}")
        w = read_wav(wav_path)
        if w.fs != h.fs:
            raise ParseError(f"{wav_path}: sampling rate {w.fs} differs from header ({h.fs})")
        segments = []
        if tsv_name is not None:
            tsv_path = wav_dir / tsv_name
            if not tsv_path.is_file():
                raise FileNotFoundError(f"patient {h.id}: missing segmentation {tsv_path}")
            segments = read_tsv(tsv_path)
        recordings.append(
            Recording(
                location=site,
                waveform=w,
                murmur=derive_recording_murmur(h.murmur, h.murmur_locations, site),
                segments=segments,
                stem=Path(wav_name).stem,
            )
        )
    return PatientRecord(
        id=h.id, age=h.age, sex=h.sex, pregnant=h.pregnant, murmur=h.murmur,
        murmur_locations=h.murmur_locations, outcome=h.outcome,
        recordings=recordings, extra=h.extra,
    )


def _recording_stems(p: PatientRecord) -> List[str]:
    stems, seen = [], {}
    for r in p.recordings:
        if r.stem:
            stems.append(r.stem)
            continue
        seen[r.location] = seen.get(r.location, 0) + 1
        suffix = "" if seen[r.location] == 1 else f"_{seen[r.location]}"
        stems.append(f"{p.id}_{r.location}{suffix}")
    return stems


def header_text(p: PatientRecord) -> str:
    fs = p.recordings[0].waveform.fs
    lines = [f"{p.id} {len(p.recordings)} {fs}"]
    for r, stem in zip(p.recordings, _recording_stems(p)):
        lines.append(f"{r.location} {stem}.wav {stem}.tsv")
    lines += [
        f"#Age: {p.age}",
        f"#Sex: {p.sex}",
        f"#Pregnancy status: {p.pregnant}",
        f"#Murmur: {p.murmur.value}",
        f"#Murmur locations: {'+'.join(p.murmur_locations) if p.murmur_locations else 'nan'}",
        f"#Outcome: {p.outcome.value}",
    ]
    lines += [f"#{k}: {v}" for k, v in p.extra.items()]
    return "".join(line + "\n" for line in lines)


def write_patient(p: PatientRecord, out_dir: Union[str, Path]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r, stem in zip(p.recordings, _recording_stems(p)):
        write_wav(out_dir / f"{stem}.wav", r.waveform)
        write_tsv(out_dir / f"{stem}.tsv", r.segments)
    (out_dir / f"{p.id}.txt").write_text(header_text(p), encoding="utf-8")


def header_paths(data_dir: Union[str, Path]) -> List[Path]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    return sorted(data_dir.glob("*.txt"), key=lambda p: p.stem)


def load_patient(header_path: Union[str, Path]) -> PatientRecord:
    header_path = Path(header_path)
    text = header_path.read_text(encoding="utf-8")
    try:
        return parse_patient(text, header_path.parent)
    except ParseError as exc:
        raise ParseError(f"{header_path}: {exc}") from None


def load_dataset(data_dir: Union[str, Path], ids: Optional[Iterable[str]] = None) -> List[PatientRecord]:
    wanted = None if ids is None else set(ids)
    patients = []
    for path in header_paths(data_dir):
        if wanted is not None and path.stem not in wanted:
            continue
        patients.append(load_patient(path))
    if wanted is not None:
        missing = wanted - {p.id for p in patients}
        if missing:
            raise FileNotFoundError(f"patients not found in {data_dir}: {sorted(missing)[:5]}")
    return patients


def load_headers(data_dir: Union[str, Path]) -> List[Header]:
    out = []
    for path in header_paths(data_dir):
        try:
            out.append(parse_header(path.read_text(encoding="utf-8")))
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitSpec:
    train_ids: List[str]
    val_ids: List[str]
    seed: int
    ratio: float = 0.2

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.val_ids)
        if overlap:
            raise ValueError(f"patients in both train and validation: {sorted(overlap)[:5]}")

    def to_json(self) -> str:
        return json.dumps(
            {"train_ids": self.train_ids, "val_ids": self.val_ids, "seed": self.seed, "ratio": self.ratio},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed split file: {exc.msg} at line {exc.lineno}") from None
        try:
            return cls(list(d["train_ids"]), list(d["val_ids"]), int(d["seed"]), float(d.get("ratio", 0.2)))
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValueError(f"malformed split file: {exc}") from None


def stratified_split(patients: Sequence[PatientRecord], ratio: float = 0.2, seed: int = 0) -> SplitSpec:
    """Patient-level split stratified on (age, sex, pregnancy, murmur, outcome).

    Each stratum first contributes ``floor(ratio * size)`` patients; the
    remaining validation slots (up to ``round(ratio * total)``) go to the
    strata with the largest fractional remainders. Singleton strata always
    stay in training.
    """
    if not patients:
        raise ValueError("cannot split an empty patient list")
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"validation ratio must lie in [0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    strata: Dict[Tuple, List[str]] = {}
    for p in patients:
        strata.setdefault(p.stratum, []).append(p.id)
    keys = sorted(strata, key=repr)
    members = {k: [strata[k][i] for i in rng.permutation(len(strata[k]))] for k in keys}

    quota = {k: ratio * len(members[k]) for k in keys}
    take = {k: (0 if len(members[k]) == 1 else math.floor(quota[k])) for k in keys}
    target = math.floor(ratio * len(patients) + 0.5)
    spare = target - sum(take.values())
    order = [keys[i] for i in rng.permutation(len(keys))]
    order.sort(key=lambda k: -(quota[k] - math.floor(quota[k])))
    for k in order:
        if spare <= 0:
            break
        if len(members[k]) > 1 and take[k] + 1 < len(members[k]) and quota[k] > take[k]:
            take[k] += 1
            spare -= 1

    val = set()
    for k in keys:
        val.update(members[k][: take[k]])
    ordered = [p.id for p in patients]
    return SplitSpec(
        train_ids=[i for i in ordered if i not in val],
        val_ids=[i for i in ordered if i in val],
        seed=seed,
        ratio=ratio,
    )


# ---------------------------------------------------------------------------
# windows


def sample_states(segments: Sequence[SegmentInterval], n: int, fs: int) -> np.ndarray:
    """Per-sample state array (0 where no interval covers a sample)."""
    states = np.zeros(n, dtype=np.int64)
    for seg in segments:
        lo = max(0, math.ceil(seg.start * fs - 1e-9))
        hi = min(n, math.ceil(seg.end * fs - 1e-9))
        if hi > lo:
            states[lo:hi] = seg.state
    return states


def window(
    samples: np.ndarray,
    states: Optional[np.ndarray],
    length: int,
    train: bool,
    rng: Optional[np.random.Generator] = None,
) -> List[Tuple[np.ndarray, Optional[np.ndarray]]]:
    """Cut a recording into fixed-length windows, zero-padding on the right.

    Training mode returns one random crop; evaluation mode tiles the whole
    recording without overlap.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size

    def cut(start):
        x = np.zeros(length)
        seg = samples[start : start + length]
        x[: seg.size] = seg
        s = None
        if states is not None:
            s = np.zeros(length, dtype=np.int64)
            part = states[start : start + length]
            s[: part.size] = part
        return x, s

    if train:
        if rng is None:
            raise ValueError("training-mode windowing needs an rng")
        start = int(rng.integers(0, n - length + 1)) if n > length else 0
        return [cut(start)]
    return [cut(start) for start in range(0, max(n, 1), length)]


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    fs: int = 4000
    duration_s: Tuple[float, float] = (10.0, 16.0)
    sites: Tuple[str, ...] = ("AV", "PV", "TV", "MV")
    heart_rate_bpm: Tuple[float, float] = (60.0, 120.0)
    murmur_snr_db: float = 10.0
    background_snr_db: Tuple[float, float] = (20.0, 30.0)
    unknown_snr_db: Tuple[float, float] = (-10.0, -6.0)
    murmur_band: Tuple[float, float] = (150.0, 350.0)
    s1_freq: Tuple[float, float] = (30.0, 80.0)
    s2_freq: Tuple[float, float] = (60.0, 150.0)
    s3_freq: Tuple[float, float] = (30.0, 60.0)
    s3_gain: float = 0.6
    murmur_cycle: Tuple[str, ...] = ("Present", "Unknown", "Absent")
    outcome_cycle: Tuple[str, ...] = ("Abnormal", "Normal")

    def labels_for(self, i: int) -> Tuple[Murmur, Outcome]:
        m = Murmur(self.murmur_cycle[i % len(self.murmur_cycle)])
        o = Outcome(self.outcome_cycle[(i // len(self.murmur_cycle)) % len(self.outcome_cycle)])
        return m, o


def _burst(t: np.ndarray, center: float, width: float, freq: float, phase: float) -> np.ndarray:
    sigma = width / 6.0
    lo, hi = np.searchsorted(t, [center - 3 * sigma, center + 3 * sigma])
    out = np.zeros_like(t)
    tt = t[lo:hi] - center
    out[lo:hi] = np.exp(-0.5 * (tt / sigma) ** 2) * np.sin(2 * np.pi * freq * tt + phase)
    return out


def _heart_cycle(duration: float, fs: int, hr: float, outcome: Outcome, cfg: SynthConfig,
                 rng: np.random.Generator):
    """Clean S1/S2 (plus S3 for abnormal outcome) signal, systole mask and intervals."""
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    heart = np.zeros(n)
    systole = np.zeros(n, dtype=bool)
    segments: List[SegmentInterval] = []
    f1 = rng.uniform(*cfg.s1_freq)
    f2 = rng.uniform(*cfg.s2_freq)
    f3 = rng.uniform(*cfg.s3_freq)
    period = 60.0 / hr
    onset = rng.uniform(0.05, period)
    if onset > 0:
        segments.append(SegmentInterval(0.0, round(onset, 6), 0))
    while onset < duration:
        p = period * rng.uniform(0.97, 1.03)
        s1_end = onset + 0.10
        s2_start = s1_end + max(0.10, 0.35 * p - 0.10)
        s2_end = s2_start + 0.08
        cycle_end = onset + p
        bounds = [(onset, s1_end, 1), (s1_end, s2_start, 2), (s2_start, s2_end, 3), (s2_end, cycle_end, 4)]
        for a, b, state in bounds:
            a, b = round(min(a, duration), 6), round(min(b, duration), 6)
            if b > a:
                segments.append(SegmentInterval(a, b, state))
        heart += rng.uniform(0.8, 1.2) * _burst(t, onset + 0.05, 0.10, f1, rng.uniform(0, 2 * np.pi))
        heart += rng.uniform(0.6, 1.0) * _burst(t, s2_start + 0.04, 0.08, f2, rng.uniform(0, 2 * np.pi))
        if outcome == Outcome.ABNORMAL:
            heart += cfg.s3_gain * _burst(t, s2_end + 0.14, 0.10, f3, rng.uniform(0, 2 * np.pi))
        lo, hi = np.searchsorted(t, [s1_end, s2_start])
        systole[lo:hi] = True
        onset = cycle_end
    return heart, systole, segments


def _band_noise(n: int, band: Tuple[float, float], fs: int, rng: np.random.Generator) -> np.ndarray:
    sos = butter(4, band, btype="bandpass", fs=fs, output="sos")
    return sosfiltfilt(sos, rng.standard_normal(n))


def _scale_to_snr(ref_power: float, x: np.ndarray, snr_db: float) -> np.ndarray:
    p = np.mean(x * x)
    if p == 0 or not np.isfinite(snr_db):
        return np.zeros_like(x)
    return x * math.sqrt(ref_power / (10.0 ** (snr_db / 10.0) * p))


def synth_recording(site: str, murmur: Murmur, outcome: Outcome, cfg: SynthConfig,
                    rng: np.random.Generator, duration: Optional[float] = None,
                    hr: Optional[float] = None) -> Recording:
    duration = rng.uniform(*cfg.duration_s) if duration is None else duration
    hr = rng.uniform(*cfg.heart_rate_bpm) if hr is None else hr
    heart, systole, segments = _heart_cycle(duration, cfg.fs, hr, outcome, cfg, rng)
    n = heart.size
    p_heart = float(np.mean(heart * heart))
    x = heart.copy()
    if murmur == Murmur.PRESENT:
        mur = _band_noise(n, cfg.murmur_band, cfg.fs, rng) * systole
        x += _scale_to_snr(p_heart, mur, cfg.murmur_snr_db)
    if murmur == Murmur.UNKNOWN:
        snr = rng.uniform(*cfg.unknown_snr_db)
    else:
        snr = rng.uniform(*cfg.background_snr_db)
    x += _scale_to_snr(p_heart, rng.standard_normal(n), snr)
    x *= 0.5 / np.max(np.abs(x))
    # store what the 16-bit file will hold
    x = quantize(x).astype(np.float64) / 32768.0
    return Recording(site, Waveform(x, cfg.fs), murmur, segments)


def synth_dataset(n_patients: int, cfg: Optional[SynthConfig] = None, seed: int = 0) -> List[PatientRecord]:
    """Desk-scale PCG-like patients with ground-truth segmentation.

    Labels cycle deterministically through ``cfg.murmur_cycle`` x
    ``cfg.outcome_cycle`` so class counts are balanced.
    """
    if n_patients < 4:
        raise ValueError(f"need at least 4 synthetic patients, got {n_patients}")
    cfg = cfg or SynthConfig()
    patients = []
    for i in range(n_patients):
        rng = np.random.default_rng([seed, i])
        murmur, outcome = cfg.labels_for(i)
        sites = tuple(cfg.sites)
        if murmur == Murmur.PRESENT:
            k = int(rng.integers(1, len(sites) + 1))
            locations = tuple(sorted(rng.choice(sites, size=k, replace=False), key=sites.index))
        else:
            locations = ()
        hr = rng.uniform(*cfg.heart_rate_bpm)
        recordings = []
        for site in sites:
            rec_murmur = derive_recording_murmur(murmur, locations, site)
            rec = synth_recording(site, rec_murmur, outcome, cfg, rng, hr=hr)
            rec.stem = f"{10000 + i}_{site}"
            recordings.append(rec)
        patients.append(
            PatientRecord(
                id=str(10000 + i),
                age="Child",
                sex=SEXES[(i // 12) % 2],
                pregnant=False,
                murmur=murmur,
                murmur_locations=locations,
                outcome=outcome,
                recordings=recordings,
            )
        )
    return patients


def write_dataset(patients: Sequence[PatientRecord], out_dir: Union[str, Path]) -> None:
    for p in patients:
        write_patient(p, out_dir)
