"""Raw media loading: images, video frames at 1 fps, WAV audio, MFCC.

Video decoding goes through OpenCV; audio is 16-bit PCM WAV via the
stdlib (container audio tracks need an external demuxer and are out of
scope; see the pipeline's audio_path fallback). MFCC is computed here
directly: Hamming-windowed power spectrum, mel filter bank, log, DCT-II,
mean over frames.
"""

from __future__ import annotations

import wave
from pathlib import Path

import cv2
import numpy as np
from scipy.fft import dct

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
VIDEO_SUFFIXES = {".avi", ".mp4", ".mkv", ".mov", ".webm"}
FRAME_CAP = 100
CHUNK_SECONDS = 30.0
SILENCE_PEAK = 1e-4


def media_kind(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in IMAGE_SUFFIXES:
        return "image"
    if suffix in VIDEO_SUFFIXES:
        return "video"
    if suffix == ".wav":
        return "audio"
    raise ValueError(f"unsupported media type: {path}")


def load_image(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise ValueError(f"cannot decode image: {path}")
    return img


def load_video_frames(path, cap: int = FRAME_CAP) -> list[np.ndarray]:
    """One frame per second of footage, at most `cap` frames."""
    video = cv2.VideoCapture(str(path))
    if not video.isOpened():
        raise ValueError(f"cannot open video: {path}")
    try:
        fps = video.get(cv2.CAP_PROP_FPS) or 0.0
        count = int(video.get(cv2.CAP_PROP_FRAME_COUNT) or 0)
        if fps <= 0 or count <= 0:
            raise ValueError(f"video has no usable timing metadata: {path}")
        duration = count / fps
        n_frames = max(1, min(int(duration), cap))
        frames = []
        for second in range(n_frames):
            video.set(cv2.CAP_PROP_POS_FRAMES, min(round(second * fps), count - 1))
            ok, frame = video.read()
            if not ok:
                break
            frames.append(frame)
        if not frames:
            raise ValueError(f"no frames decoded: {path}")
        return frames
    finally:
        video.release()


def load_wav(path) -> tuple[np.ndarray, int]:
    """16-bit PCM WAV to mono float32 in [-1, 1] plus the sample rate."""
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM WAV is supported")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
        data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
        channels = fh.getnchannels()
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return data, rate


def is_silent(samples: np.ndarray, peak: float = SILENCE_PEAK) -> bool:
    return samples.size == 0 or float(np.abs(samples).max()) < peak


def chunk_waveform(samples: np.ndarray, rate: int,
                   seconds: float = CHUNK_SECONDS) -> list[np.ndarray]:
    """Consecutive chunks of at most `seconds`; the tail keeps its remainder."""
    if samples.size == 0:
        return []
    step = int(rate * seconds)
    return [samples[i : i + step] for i in range(0, len(samples), step)]


def _mel_filter_bank(n_mels: int, n_fft: int, rate: int) -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), n_mels + 2)
    bins = np.floor((n_fft + 1) * mel_to_hz(mel_points) / rate).astype(int)
    bank = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        left, center, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, center):
            if center > left:
                bank[m - 1, k] = (k - left) / (center - left)
        for k in range(center, right):
            if right > center:
                bank[m - 1, k] = (right - k) / (right - center)
    return bank


def mfcc_vector(samples: np.ndarray, rate: int, n_coeff: int = 40,
                n_mels: int = 64) -> np.ndarray:
    """Mean MFCC over 25 ms frames with 10 ms hop -> [n_coeff] float32."""
    frame_len = max(16, int(rate * 0.025))
    hop = max(8, int(rate * 0.010))
    if samples.size < frame_len:
        samples = np.pad(samples, (0, frame_len - samples.size))
    n_frames = 1 + (len(samples) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * np.hamming(frame_len)
    n_fft = 1 << (frame_len - 1).bit_length()
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    bank = _mel_filter_bank(n_mels, n_fft, rate)
    logmel = np.log(power @ bank.T + 1e-10)
    coeffs = dct(logmel, type=2, axis=1, norm="ortho")[:, :n_coeff]
    return coeffs.mean(axis=0).astype(np.float32)
