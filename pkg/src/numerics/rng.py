"""
乱数ストリーム
ラベル付きの子ストリームで、他の場所での乱数消費順序に依存しない乱数を提供
"""

import hashlib
from typing import Tuple

import numpy as np


def _derive_seed(seed: int, path: str) -> int:
    """シードとラベルパスから64ビットシードを導出"""
    digest = hashlib.sha256(f"{seed}:{path}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """
    シード付き乱数ストリーム

    同じ (seed, path) からは常に同じ系列が得られます。child() で作る子ストリームは
    親の消費状態とは無関係に決まります。
    """

    def __init__(self, seed: int, path: str = ""):
        if seed < 0:
            raise ValueError(f"シードは0以上である必要があります: {seed}")
        self.seed = int(seed)
        self.path = path
        self._generator = np.random.Generator(
            np.random.PCG64(_derive_seed(self.seed, path))
        )

    def child(self, label: str) -> "Rng":
        """ラベル付きの子ストリームを作成"""
        path = f"{self.path}/{label}" if self.path else label
        return Rng(self.seed, path)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        """正規乱数（平均0）"""
        return self._generator.normal(0.0, scale, size=size).astype(np.float64)

    def uniform(self, low: float, high: float, size=None):
        """一様乱数 [low, high)"""
        return self._generator.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None):
        """整数乱数 [low, high)"""
        return self._generator.integers(low, high, size=size)

    def unit_vector(self, dim: int) -> np.ndarray:
        """単位ノルムのガウス乱数ベクトル"""
        while True:
            v = self._generator.normal(0.0, 1.0, size=dim)
            norm = np.linalg.norm(v)
            if norm > 0.0:
                return (v / norm).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        """0..n-1 の順列"""
        return self._generator.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> Tuple[int, ...]:
        """0..n-1 から k 個を非復元抽出（抽出順のまま返す）"""
        picked = self._generator.choice(n, size=k, replace=False)
        return tuple(int(i) for i in picked)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path!r})"
