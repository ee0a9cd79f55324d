#!/usr/bin/env python3
"""
Cert Relay - Seeded Randomness
证书中继 - 种子化随机源

所有随机性都来自单个运行种子，经 numpy Philox 计数器生成器按标签派生独立子流。
同一 (seed, labels) 在任何机器上产生相同序列。
"""

import zlib
from typing import Sequence, List, TypeVar, Union

import numpy as np

T = TypeVar("T")

Label = Union[int, str]


def _label_key(label: Label) -> int:
    if isinstance(label, int):
        if label < 0:
            raise ValueError(f"integer labels must be non-negative, got {label}")
        return label
    return zlib.crc32(str(label).encode("utf-8"))


def make_rng(seed: int, *labels: Label) -> np.random.Generator:
    """
    为 (seed, *labels) 派生一个独立的 Philox 随机流

    Args:
        seed: 运行种子（非负整数）
        labels: 子系统标签，例如 ("samples", pid)

    Returns:
        np.random.Generator
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    spawn_key = tuple(_label_key(label) for label in labels)
    seq = np.random.SeedSequence(entropy=seed, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def sample_without_replacement(rng: np.random.Generator, population: Sequence[T], k: int) -> List[T]:
    """从 population 中无放回均匀抽取 k 个元素（保持抽取顺序）"""
    if k > len(population):
        raise ValueError(f"sample size must be <= population size {len(population)}, got {k}")
    picks = rng.choice(len(population), size=k, replace=False)
    return [population[int(i)] for i in picks]
