import csv
import wave

import cv2
import numpy as np
import pytest


def write_wav(path, seconds=1.0, rate=8000, freq=440.0, amplitude=0.5,
              channels=1):
    t = np.arange(int(rate * seconds)) / rate
    signal = amplitude * np.sin(2 * np.pi * freq * t)
    pcm = (signal * 32767).astype("<i2")
    if channels == 2:
        pcm = np.column_stack([pcm, pcm]).reshape(-1)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())
    return path


def write_silent_wav(path, seconds=1.0, rate=8000):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(b"\x00\x00" * int(rate * seconds))
    return path


def write_image(path, seed=0, size=32):
    rng = np.random.default_rng(seed)
    cv2.imwrite(str(path), rng.integers(0, 255, (size, size, 3), np.uint8))
    return path


def write_video(path, n_frames=30, fps=1.0, size=32):
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"),
                             fps, (size, size))
    assert writer.isOpened()
    for i in range(n_frames):
        frame = np.full((size, size, 3), (i * 7) % 255, np.uint8)
        writer.write(frame)
    writer.release()
    return path


@pytest.fixture(scope="session")
def toy_media(tmp_path_factory):
    """Five-sample media set: three images, one video (+audio), one audio."""
    root = tmp_path_factory.mktemp("toy_media")
    write_image(root / "s1.png", seed=1)
    write_image(root / "s2.png", seed=2)
    write_video(root / "s3.avi", n_frames=12, fps=1.0)
    write_wav(root / "s3.wav", seconds=2.0, freq=330)   # sibling audio track
    write_wav(root / "s4.wav", seconds=5.0, freq=550)
    write_image(root / "s5.png", seed=5)
    rows = [
        ("s1", 1, "train", "s1.png", "an angry caption"),
        ("s2", 0, "train", "s2.png", "a calm caption"),
        ("s4", 1, "train", "s4.wav", ""),
        ("s3", 0, "val", "s3.avi", "a narrated clip"),
        ("s5", 1, "test", "s5.png", "another caption"),
    ]
    with open(root / "media.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "split", "media_path", "caption"])
        writer.writerows(rows)
    return root
