"""Fundamental-frequency tracking and note segmentation.

extract_f0 runs a YIN front end (difference function, cumulative-mean
normalization, parabolic interpolation) followed by Viterbi smoothing
over a 10-cent pitch grid plus an unvoiced state. segment_notes decodes
the smoothed curve into MIDI notes with a second HMM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import DEFAULT_HOP, DEFAULT_SAMPLE_RATE, Waveform
from .midi import MIDI_NOTE_MAX, MIDI_NOTE_MIN, MidiSequence, NoteEvent, frame_midi

F0_MIN = 50.0
F0_MAX = 1100.0
YIN_WINDOW = 2048
YIN_THRESHOLD = 0.15
GRID_CENTS = 10.0
# transition penalty per cent of pitch movement between frames
TRANSITION_PENALTY = 0.05
NOTE_SIGMA_CENTS = 50.0
NOTE_SELF_TRANS = 0.95
NOTE_MIN_FRAMES = 3


class PitchError(ValueError):
    """Contract violation in pitch extraction or conversion."""


def hz_to_midi(f: float) -> float:
    if f <= 0:
        raise PitchError("frequency must be positive")
    return 69.0 + 12.0 * math.log2(f / 440.0)


def midi_to_hz(m: float) -> float:
    return 440.0 * 2.0 ** ((m - 69.0) / 12.0)


def cents_diff(f1: float, f2: float) -> float:
    if f1 <= 0 or f2 <= 0:
        raise PitchError("frequency must be positive")
    return 1200.0 * math.log2(f1 / f2)


@dataclass
class PitchCurve:
    """Per-frame f0 in Hz (0 when unvoiced) and a voicing mask."""

    f0: np.ndarray
    voiced: np.ndarray
    hop: int = DEFAULT_HOP
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0.shape != self.voiced.shape:
            raise PitchError("f0/voiced length mismatch")
        if np.any(self.f0 < 0):
            raise PitchError("f0 must be non-negative")
        if np.any((self.f0 > 0) != self.voiced):
            raise PitchError("f0 > 0 must coincide with voiced flags")
        v = self.f0[self.voiced]
        if v.size and (v.min() < F0_MIN or v.max() > F0_MAX):
            raise PitchError(f"voiced f0 outside [{F0_MIN}, {F0_MAX}]")

    @property
    def n_frames(self) -> int:
        return len(self.f0)


def viterbi(log_obs: np.ndarray, log_trans: np.ndarray, log_init: np.ndarray) -> np.ndarray:
    """Maximum-probability HMM state path.

    Ties break toward the lower state index at every decision.
    """
    log_obs = np.asarray(log_obs, dtype=np.float64)
    log_trans = np.asarray(log_trans, dtype=np.float64)
    log_init = np.asarray(log_init, dtype=np.float64)
    if log_obs.ndim != 2 or log_obs.shape[0] < 1:
        raise PitchError("log_obs must be frames x states with >= 1 frame")
    n_frames, n_states = log_obs.shape
    if log_trans.shape != (n_states, n_states) or log_init.shape != (n_states,):
        raise PitchError("HMM dimension mismatch")
    for arr in (log_obs, log_trans, log_init):
        if not np.all(np.isfinite(arr)):
            raise PitchError("log-probabilities must be finite")

    delta = log_init + log_obs[0]
    back = np.zeros((n_frames, n_states), dtype=np.int64)
    for t in range(1, n_frames):
        scores = delta[:, None] + log_trans
        back[t] = np.argmax(scores, axis=0)  # first max = lowest index
        delta = scores[back[t], np.arange(n_states)] + log_obs[t]
    path = np.zeros(n_frames, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def _yin_cmndf(x: np.ndarray, sample_rate: int, hop: int, window: int) -> np.ndarray:
    """Cumulative-mean-normalized difference function per centered frame."""
    pad = window // 2
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + len(x) // hop
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx]

    max_lag = int(sample_rate / F0_MIN)
    n_fft = 1
    while n_fft < window + max_lag + 1:
        n_fft *= 2
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    autocorr = np.fft.irfft(spec * np.conj(spec), n=n_fft, axis=1)[:, :max_lag + 1]

    sq = frames * frames
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    total = csum[:, -1:]
    taus = np.arange(max_lag + 1)
    # energy of x[0:W-tau] and of x[tau:W]
    head = csum[:, window - taus]
    tail = total - csum[:, taus]
    diff = np.maximum(head + tail - 2.0 * autocorr, 0.0)

    cmndf = np.ones_like(diff)
    running = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = diff[:, 1:] * taus[1:] / running
    cmndf[:, 1:] = np.where(running > 0, norm, 1.0)
    return cmndf


def _parabolic_refine(cmndf_row: np.ndarray, tau: int) -> tuple[float, float]:
    if tau <= 0 or tau >= len(cmndf_row) - 1:
        return float(tau), float(cmndf_row[tau])
    y0, y1, y2 = cmndf_row[tau - 1], cmndf_row[tau], cmndf_row[tau + 1]
    denom = 2.0 * (y0 - 2.0 * y1 + y2)
    if abs(denom) < 1e-12:
        return float(tau), float(y1)
    shift = float(np.clip((y0 - y2) / denom, -1.0, 1.0))
    value = y1 - (y0 - y2) * shift / 4.0
    return tau + shift, max(float(value), 0.0)


def _frame_candidates(cmndf_row: np.ndarray, min_lag: int, max_lag: int,
                      sample_rate: int) -> tuple[list[tuple[float, float]], bool]:
    """(frequency, weight) candidates for one frame.

    Returns (candidates, confident) where confident means at least one
    local minimum fell below the YIN threshold.
    """
    region = cmndf_row[min_lag:max_lag + 1]
    interior = region[1:-1]
    minima = np.where((interior <= region[:-2]) & (interior <= region[2:])
                      & (interior < YIN_THRESHOLD))[0] + min_lag + 1
    confident = minima.size > 0
    lags = list(minima) if confident else [min_lag + int(np.argmin(region))]
    out = []
    for lag in lags:
        ref_lag, value = _parabolic_refine(cmndf_row, int(lag))
        if ref_lag <= 0:
            continue
        freq = float(np.clip(sample_rate / ref_lag, F0_MIN, F0_MAX))
        out.append((freq, max(1.0 - value, 0.05)))
    return out, confident


def _decay_pass(x: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Running max of x[j] - step * (s - j) over j <= s, with argmax."""
    idx = np.arange(len(x))
    y = x + step * idx
    run = np.maximum.accumulate(y)
    arg = np.maximum.accumulate(np.where(y >= run, idx, 0))
    return run - step * idx, arg


def _viterbi_pitch_grid(obs_voiced: np.ndarray, obs_uv: np.ndarray,
                        step_penalty: float) -> np.ndarray:
    """Exact Viterbi over {pitch grid} + {unvoiced} in O(frames x states).

    The grid transition cost is linear in cents, so the max over
    predecessors is a two-sided running max with linear decay. Returns
    the state path with n_states meaning unvoiced.
    """
    n_frames, n_states = obs_voiced.shape
    stay_uv = math.log(0.98)
    leave_uv = math.log(0.02) - math.log(n_states)
    to_uv = math.log(0.02)
    stay_voiced = math.log(0.98)
    # row normalizer of the Laplacian kernel, closed form of two geometric sums
    r = math.exp(-step_penalty)
    s_idx = np.arange(n_states)
    z_left = (1.0 - r ** (s_idx + 1)) / (1.0 - r)
    z_right = (1.0 - r ** (n_states - s_idx)) / (1.0 - r)
    log_z = np.log(z_left + z_right - 1.0)

    delta_v = obs_voiced[0] - math.log(2.0 * n_states)
    delta_uv = obs_uv[0] - math.log(2.0)
    back_v = np.zeros((n_frames, n_states), dtype=np.int64)
    back_uv = np.zeros(n_frames, dtype=np.int64)

    for t in range(1, n_frames):
        src = delta_v + stay_voiced - log_z
        left_val, left_arg = _decay_pass(src, step_penalty)
        right_rev, right_arg_rev = _decay_pass(src[::-1], step_penalty)
        right_val = right_rev[::-1]
        right_arg = n_states - 1 - right_arg_rev[::-1]
        from_voiced = np.where(right_val > left_val, right_val, left_val)
        voiced_arg = np.where(right_val > left_val, right_arg, left_arg)
        from_uv = delta_uv + leave_uv
        new_v = np.where(from_uv > from_voiced, from_uv, from_voiced)
        back_v[t] = np.where(from_uv > from_voiced, n_states, voiced_arg)

        best_voiced_src = int(np.argmax(delta_v))
        uv_from_voiced = delta_v[best_voiced_src] + to_uv
        uv_from_uv = delta_uv + stay_uv
        if uv_from_uv >= uv_from_voiced:
            back_uv[t] = n_states
            delta_uv = uv_from_uv + obs_uv[t]
        else:
            back_uv[t] = best_voiced_src
            delta_uv = uv_from_voiced + obs_uv[t]
        delta_v = new_v + obs_voiced[t]

    path = np.zeros(n_frames, dtype=np.int64)
    best_v = int(np.argmax(delta_v))
    path[-1] = n_states if delta_uv >= delta_v[best_v] else best_v
    for t in range(n_frames - 1, 0, -1):
        state = path[t]
        path[t - 1] = back_uv[t] if state == n_states else back_v[t, state]
    return path


def extract_f0(wave: Waveform, hop: int = DEFAULT_HOP) -> PitchCurve:
    """YIN candidates smoothed by Viterbi over a 10-cent pitch grid.

    The frame grid matches mel_spectrogram: 1 + len // hop centered
    frames.
    """
    sr = wave.sample_rate
    if len(wave.samples) < 2 * sr / F0_MIN:
        raise PitchError("waveform shorter than two pitch periods at 50 Hz")
    cmndf = _yin_cmndf(wave.samples, sr, hop, YIN_WINDOW)
    n_frames = cmndf.shape[0]
    min_lag = max(2, int(sr / F0_MAX))
    max_lag = int(sr / F0_MIN)

    n_states = int(1200.0 * math.log2(F0_MAX / F0_MIN) / GRID_CENTS) + 1
    grid_cents = np.arange(n_states) * GRID_CENTS
    grid_freqs = F0_MIN * 2.0 ** (grid_cents / 1200.0)

    sigma = 20.0  # cents
    obs_voiced = np.empty((n_frames, n_states))
    obs_uv = np.empty(n_frames)
    all_candidates: list[list[tuple[float, float]]] = []
    for i in range(n_frames):
        cands, confident = _frame_candidates(cmndf[i], min_lag, max_lag, sr)
        all_candidates.append(cands)
        p_uv = 0.02 if confident else 0.9
        obs_uv[i] = math.log(p_uv)
        best = np.full(n_states, -18.0)
        for freq, weight in cands:
            cand_cents = 1200.0 * math.log2(freq / F0_MIN)
            score = math.log(weight) - 0.5 * ((grid_cents - cand_cents) / sigma) ** 2
            np.maximum(best, score, out=best)
        obs_voiced[i] = math.log1p(-p_uv) + np.maximum(best, -18.0)

    step_penalty = TRANSITION_PENALTY * GRID_CENTS
    path = _viterbi_pitch_grid(obs_voiced, obs_uv, step_penalty)

    f0 = np.zeros(n_frames)
    voiced = path < n_states
    for i in np.where(voiced)[0]:
        center = grid_freqs[path[i]]
        best_freq, best_dist = float(center), 60.0
        for freq, _ in all_candidates[i]:
            dist = abs(1200.0 * math.log2(freq / center))
            if dist < best_dist:
                best_freq, best_dist = freq, dist
        f0[i] = min(max(best_freq, F0_MIN), F0_MAX)
    return PitchCurve(f0, voiced, hop, sr)


def segment_notes(pitch: PitchCurve) -> MidiSequence:
    """Decode a pitch curve into MIDI notes 21..108 via an HMM.

    Gaussian emissions in cents (sigma 50) around each note center, a
    rest state for unvoiced frames, self-transition probability 0.95,
    and minimum note length 3 frames (shorter runs merge into their
    neighbors).
    """
    n_frames = pitch.n_frames
    if n_frames == 0 or not np.any(pitch.voiced):
        return MidiSequence([])
    notes = np.arange(MIDI_NOTE_MIN, MIDI_NOTE_MAX + 1)
    n_states = len(notes) + 1  # state 0 is rest
    note_cents = 1200.0 * np.log2(np.array([midi_to_hz(m) for m in notes]) / F0_MIN)

    obs = np.full((n_frames, n_states), -8.0)
    obs[~pitch.voiced, 0] = 0.0
    for i in np.where(pitch.voiced)[0]:
        f_cents = 1200.0 * math.log2(pitch.f0[i] / F0_MIN)
        obs[i, 1:] = np.maximum(-0.5 * ((note_cents - f_cents) / NOTE_SIGMA_CENTS) ** 2, -12.0)

    log_trans = np.full((n_states, n_states), math.log((1 - NOTE_SELF_TRANS) / (n_states - 1)))
    np.fill_diagonal(log_trans, math.log(NOTE_SELF_TRANS))
    path = viterbi(obs, log_trans, np.zeros(n_states))

    runs = []
    start = 0
    for i in range(1, n_frames + 1):
        if i == n_frames or path[i] != path[start]:
            runs.append([int(path[start]), start, i])
            start = i
    # absorb short runs into the previous run (or the next at the start)
    changed = True
    while changed and len(runs) > 1:
        changed = False
        for k, run in enumerate(runs):
            if run[2] - run[1] < NOTE_MIN_FRAMES:
                if k > 0:
                    runs[k - 1][2] = run[2]
                else:
                    runs[1][1] = run[1]
                del runs[k]
                merged = []
                for r in runs:
                    if merged and merged[-1][0] == r[0]:
                        merged[-1][2] = r[2]
                    else:
                        merged.append(r)
                runs = merged
                changed = True
                break

    events = [NoteEvent(notes[state - 1], lo, hi)
              for state, lo, hi in runs if state > 0]
    return MidiSequence(events)


def pitch_from_frame_midi(frame_notes: np.ndarray, hop: int = DEFAULT_HOP,
                          sample_rate: int = DEFAULT_SAMPLE_RATE) -> PitchCurve:
    """Render per-frame note numbers to a pitch curve at note centers.

    Frequencies clamp to the trackable band so the result is a valid
    PitchCurve.
    """
    frame_notes = np.asarray(frame_notes, dtype=np.int64)
    voiced = frame_notes > 0
    f0 = np.zeros(len(frame_notes))
    for i in np.where(voiced)[0]:
        f0[i] = min(max(midi_to_hz(int(frame_notes[i])), F0_MIN), F0_MAX)
    return PitchCurve(f0, voiced, hop, sample_rate)


def render_pitch(midi: MidiSequence, n_frames: int, hop: int = DEFAULT_HOP,
                 sample_rate: int = DEFAULT_SAMPLE_RATE) -> PitchCurve:
    """Pitch curve of a note sequence (frame_midi then note centers)."""
    return pitch_from_frame_midi(frame_midi(midi, n_frames), hop, sample_rate)
