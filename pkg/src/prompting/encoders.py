"""
凍結デュアルエンコーダー
画像エンコーダー f とテキストエンコーダー g（事前学習済みモデルの代替）

テキストエンコーダーは mean-pool → tanh 隠れ層 → 線形射影 の1層構成です。
プロンプトトークンに関する勾配のみを手書きの逆伝播で提供します。
この勾配経路は実際の事前学習済みTransformerの代替であり、同じ契約
（encode_image / encode_text / encode_text_backward）を満たす実装に差し替え可能です。
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from src.errors import ShapeError
from src.numerics.rng import Rng

# 手作りプロンプトのテンプレート
TEMPLATE_PHRASE = "a photo of a [class] with the domain of [domain]"
CLASS_PLACEHOLDER = "[class]"
DOMAIN_PLACEHOLDER = "[domain]"


def template_tokens() -> List[str]:
    """テンプレートを空白で分割したトークン列（プレースホルダーを含む）"""
    return TEMPLATE_PHRASE.split()


def template_words() -> List[str]:
    """プレースホルダーを除いたテンプレート単語列"""
    return [t for t in template_tokens() if t not in (CLASS_PLACEHOLDER, DOMAIN_PLACEHOLDER)]


@dataclass(frozen=True)
class EncoderDims:
    """エンコーダーの次元設定"""

    embed_dim: int = 32  # d
    hidden_dim: int = 64  # h
    feature_dim: int = 16  # p
    prompt_length: int = 4  # L
    tau: float = 0.07


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class TokenVocab:
    """
    トークン埋め込み辞書

    クラストークン c_j、ドメイントークン s_m、テンプレート単語の埋め込みを
    トークン名でラベル付けした乱数ストリームから単位ノルムで生成します。
    """

    def __init__(self, embed_dim: int, n_classes: int, n_domains: int, rng: Rng):
        self.embed_dim = embed_dim
        self.n_classes = n_classes
        self.n_domains = n_domains
        self._embeddings: Dict[str, np.ndarray] = {}

        for j in range(n_classes):
            self._add(f"class/{j}", rng)
        for m in range(n_domains):
            self._add(f"domain/{m}", rng)
        for word in dict.fromkeys(template_words()):
            self._add(f"word/{word}", rng)

    def _add(self, key: str, rng: Rng) -> None:
        self._embeddings[key] = _frozen(rng.child(key).unit_vector(self.embed_dim))

    def class_token(self, j: int) -> np.ndarray:
        if not 0 <= j < self.n_classes:
            raise ValueError(f"クラスIDが範囲外です: {j}")
        return self._embeddings[f"class/{j}"]

    def domain_token(self, m: int) -> np.ndarray:
        if not 0 <= m < self.n_domains:
            raise ValueError(f"ドメインIDが範囲外です: {m}")
        return self._embeddings[f"domain/{m}"]

    def word(self, word: str) -> np.ndarray:
        return self._embeddings[f"word/{word}"]

    def keys(self) -> List[str]:
        return list(self._embeddings.keys())

    def embedding(self, key: str) -> np.ndarray:
        return self._embeddings[key]


class FrozenEncoders:
    """凍結された画像エンコーダー f とテキストエンコーダー g"""

    def __init__(self, dims: EncoderDims, vocab: TokenVocab, w_f, w1, w2):
        self.dims = dims
        self.vocab = vocab
        self.w_f = _frozen(w_f)
        self.w1 = _frozen(w1)
        self.w2 = _frozen(w2)
        self.tau = float(dims.tau)

    @classmethod
    def create(cls, dims: EncoderDims, n_classes: int, n_domains: int, seed: int) -> "FrozenEncoders":
        """
        シードから重みと語彙を生成します。

        同じシードならクライアントとサーバーで同一の重みになります。
        """
        root = Rng(seed).child("encoders")
        d, h, p = dims.embed_dim, dims.hidden_dim, dims.feature_dim
        vocab = TokenVocab(d, n_classes, n_domains, root.child("vocab"))
        w_f = root.child("W_f").normal((d, p)) / np.sqrt(p)
        w1 = root.child("W1").normal((h, d)) / np.sqrt(d)
        w2 = root.child("W2").normal((d, h)) / np.sqrt(h)
        return cls(dims, vocab, w_f, w1, w2)

    def concept_anchors(self) -> np.ndarray:
        """
        クラス名・ドメイン名トークン単体のテキスト埋め込み（単位ノルム）

        Returns:
            (C + M, d)。先頭 C 行がクラス、残りがドメイン
        """
        vocab = self.vocab
        tokens = [vocab.class_token(j) for j in range(vocab.n_classes)]
        tokens += [vocab.domain_token(m) for m in range(vocab.n_domains)]
        anchors = np.array([self.encode_text([t]) for t in tokens])
        return anchors / np.linalg.norm(anchors, axis=1, keepdims=True)

    def aligned_to(
        self, prototypes: np.ndarray, shifts: np.ndarray, strength: float = 1.0
    ) -> "FrozenEncoders":
        """
        画像エンコーダーを事前学習済みに見立てて整列させたコピーを返します。

        クラスプロトタイプ u_j とドメインシフト t_m を、対応するクラス名・ドメイン名の
        テキスト埋め込みへ写す直交写像 Q（直交プロクラステス解）を求め、
        W_f ← (1 − strength)·W_f + strength·Q とします。テキスト側と語彙は共有します。

        Args:
            prototypes: クラスプロトタイプ (C, p)
            shifts: ドメインシフト (M, p)
            strength: 整列の強さ（0 で元の重みのまま）
        """
        if not 0.0 <= strength <= 1.0:
            raise ValueError(f"整列の強さは0〜1である必要があります: {strength}")
        concepts = np.vstack([np.asarray(prototypes), np.asarray(shifts)]).astype(np.float64)
        if concepts.shape != (self.vocab.n_classes + self.vocab.n_domains, self.dims.feature_dim):
            raise ShapeError(f"概念ベクトルの形状が不正です: {concepts.shape}")
        if strength == 0.0:
            return self

        left, _, right = np.linalg.svd(self.concept_anchors().T @ concepts, full_matrices=False)
        w_f = (1.0 - strength) * self.w_f + strength * (left @ right)
        return FrozenEncoders(self.dims, self.vocab, w_f, self.w1, self.w2)

    @property
    def max_sequence_length(self) -> int:
        return self.dims.prompt_length + 2

    def encode_image(self, x: np.ndarray) -> np.ndarray:
        """I = W_f · x"""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dims.feature_dim,):
            raise ShapeError(
                f"画像特徴の長さが一致しません: {x.shape} (期待値 {self.dims.feature_dim})"
            )
        return self.w_f @ x

    def encode_images(self, xs: np.ndarray) -> np.ndarray:
        """複数画像をまとめて埋め込み（行ごと）"""
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.dims.feature_dim:
            raise ShapeError(f"画像特徴の形状が不正です: {xs.shape}")
        return xs @ self.w_f.T

    def _pool(self, tokens: Sequence[np.ndarray]) -> np.ndarray:
        seq = np.asarray(tokens, dtype=np.float64)
        if seq.ndim != 2 or seq.shape[0] == 0:
            raise ShapeError("トークン列が空です")
        if seq.shape[0] > self.max_sequence_length:
            raise ShapeError(
                f"トークン列が長すぎます: {seq.shape[0]} > {self.max_sequence_length}"
            )
        if seq.shape[1] != self.dims.embed_dim:
            raise ShapeError(f"トークン次元が一致しません: {seq.shape[1]}")
        return seq

    def encode_text(self, tokens: Sequence[np.ndarray]) -> np.ndarray:
        """Z = W2 · tanh(W1 · meanpool(tokens))"""
        seq = self._pool(tokens)
        pooled = seq.mean(axis=0)
        return self.w2 @ np.tanh(self.w1 @ pooled)

    def encode_text_backward(
        self, tokens: Sequence[np.ndarray], upstream: np.ndarray
    ) -> np.ndarray:
        """
        Z の各入力トークンに関する勾配（逆伝播）

        全位置で同じ勾配 (1/n)·W1ᵀ·diag(1 − tanh²)·W2ᵀ·upstream を返します。
        クラス・ドメイントークンの位置にも勾配は返りますが、呼び出し側で破棄します。

        Returns:
            (n, d) のトークン勾配
        """
        seq = self._pool(tokens)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (self.dims.embed_dim,):
            raise ShapeError(f"上流勾配の形状が不正です: {upstream.shape}")
        n = seq.shape[0]
        hidden = np.tanh(self.w1 @ seq.mean(axis=0))
        grad_pool = self.w1.T @ ((1.0 - hidden * hidden) * (self.w2.T @ upstream))
        return np.tile(grad_pool / n, (n, 1))
