"""
プロンプト定義
G-Prompt / D-Prompts / Q-Prompt の構築、初期化、テキスト入力の組み立て、チェックポイント
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.prompting.encoders import (
    CLASS_PLACEHOLDER,
    DOMAIN_PLACEHOLDER,
    TokenVocab,
    template_tokens,
    template_words,
)
from src.numerics.rng import Rng
from src.logger import logger

# 学習可能トークンの初期化スケール
PROMPT_INIT_SCALE = 0.02


class PromptKind(str, Enum):
    """テキスト入力の種類"""

    GLOBAL = "global"
    DOMAIN = "domain"
    QUERY = "query"


@dataclass(frozen=True)
class PromptDims:
    """プロンプトバンクの次元 (L, d, M, C)"""

    prompt_length: int
    embed_dim: int
    n_domains: int
    n_classes: int

    def __post_init__(self):
        if self.n_domains < 1:
            raise ValueError(f"ドメイン数は1以上である必要があります: {self.n_domains}")
        if self.prompt_length < 1 or self.embed_dim < 1 or self.n_classes < 1:
            raise ValueError(f"プロンプト次元が不正です: {self}")


@dataclass
class DomainPrompt:
    """D-Prompt: 学習可能トークン + 固定ドメイントークン s_m"""

    tokens: np.ndarray  # (L, d)
    domain_id: int  # 元データセット上のドメインID
    domain_token: np.ndarray  # s_m（学習しない）


@dataclass
class PromptBank:
    """学習可能なプロンプト一式"""

    g_prompt: np.ndarray  # V^G (L, d)
    d_prompts: List[DomainPrompt]  # V^D_1..V^D_M
    q_prompt: np.ndarray  # V^Q (L, d)
    dims: PromptDims

    @property
    def domain_ids(self) -> List[int]:
        return [dp.domain_id for dp in self.d_prompts]

    def copy(self) -> "PromptBank":
        """ディープコピー（メッセージ送信・モメンタム用のスナップショット）"""
        return PromptBank(
            g_prompt=self.g_prompt.copy(),
            d_prompts=[
                DomainPrompt(dp.tokens.copy(), dp.domain_id, dp.domain_token)
                for dp in self.d_prompts
            ],
            q_prompt=self.q_prompt.copy(),
            dims=self.dims,
        )

    def with_prompts(
        self,
        g_prompt: Optional[np.ndarray] = None,
        d_tokens: Optional[Sequence[np.ndarray]] = None,
        q_prompt: Optional[np.ndarray] = None,
    ) -> "PromptBank":
        """指定したプロンプトだけを差し替えたバンクを返します（配列は共有）"""
        d_prompts = self.d_prompts
        if d_tokens is not None:
            if len(d_tokens) != len(self.d_prompts):
                raise ValueError("D-Promptの数が一致しません")
            d_prompts = [
                DomainPrompt(np.asarray(t, dtype=np.float64), dp.domain_id, dp.domain_token)
                for t, dp in zip(d_tokens, self.d_prompts)
            ]
        return PromptBank(
            g_prompt=self.g_prompt if g_prompt is None else np.asarray(g_prompt, dtype=np.float64),
            d_prompts=d_prompts,
            q_prompt=self.q_prompt if q_prompt is None else np.asarray(q_prompt, dtype=np.float64),
            dims=self.dims,
        )


@dataclass
class HandcraftedPrompt:
    """手作りプロンプト（ドメインごと、更新しない）"""

    domain_id: int
    sequences: List[np.ndarray] = field(default_factory=list)  # クラスごとの全トークン列
    flat: Optional[np.ndarray] = None  # Ṽ_m（L·d、クラス平均）


def _cycle_to_length(rows: Sequence[np.ndarray], length: int) -> np.ndarray:
    """行を切り詰め、または循環させてちょうど length 行にします"""
    return np.array([rows[i % len(rows)] for i in range(length)], dtype=np.float64)


def template_prompt_tokens(vocab: TokenVocab, prompt_length: int) -> np.ndarray:
    """テンプレート単語の埋め込みを L トークンに揃えたもの（Q-Prompt初期値）"""
    return _cycle_to_length([vocab.word(w) for w in template_words()], prompt_length)


def init_prompt_bank(
    dims: PromptDims, domain_ids: Sequence[int], vocab: TokenVocab, seed: int
) -> PromptBank:
    """
    プロンプトバンクを初期化します。

    V^G と各 V^D_m の学習可能トークンは N(0, 0.02²)、V^Q はテンプレート単語の埋め込みで初期化します。

    Args:
        dims: プロンプト次元
        domain_ids: 各D-Promptに対応する元ドメインID（長さ M）
        vocab: トークン辞書
        seed: シード
    """
    if len(domain_ids) != dims.n_domains:
        raise ValueError(
            f"ドメインIDの数が一致しません: {len(domain_ids)} != {dims.n_domains}"
        )
    shape = (dims.prompt_length, dims.embed_dim)
    root = Rng(seed).child("prompts")
    g_prompt = root.child("global").normal(shape, scale=PROMPT_INIT_SCALE)
    d_prompts = [
        DomainPrompt(
            tokens=root.child(f"domain/{m}").normal(shape, scale=PROMPT_INIT_SCALE),
            domain_id=int(m),
            domain_token=vocab.domain_token(int(m)),
        )
        for m in domain_ids
    ]
    q_prompt = template_prompt_tokens(vocab, dims.prompt_length)
    logger.debug(f"プロンプトバンクを初期化しました: L={dims.prompt_length}, M={dims.n_domains}")
    return PromptBank(g_prompt, d_prompts, q_prompt, dims)


def assemble_text_input(
    bank: PromptBank,
    vocab: TokenVocab,
    kind: PromptKind,
    class_id: int,
    domain_index: Optional[int] = None,
) -> np.ndarray:
    """
    テキストエンコーダーへの入力トークン列を組み立てます。

    - global: [V^G, c_j]（長さ L+1）
    - domain: [V^D_m, s_m, c_j]（長さ L+2）
    - query:  [V^Q, c_j, s_m]（長さ L+2）

    返り値は新しい配列で、バンクとメモリを共有しません。
    """
    class_token = vocab.class_token(class_id)
    kind = PromptKind(kind)
    if kind == PromptKind.GLOBAL:
        return np.vstack([bank.g_prompt, class_token])

    if domain_index is None:
        raise ValueError(f"{kind.value} 入力にはドメインの指定が必要です")
    if not 0 <= domain_index < len(bank.d_prompts):
        raise ValueError(f"ドメインインデックスが範囲外です: {domain_index}")
    d_prompt = bank.d_prompts[domain_index]
    if kind == PromptKind.DOMAIN:
        return np.vstack([d_prompt.tokens, d_prompt.domain_token, class_token])
    return np.vstack([bank.q_prompt, class_token, d_prompt.domain_token])


def handcrafted_prompt(
    vocab: TokenVocab, domain_id: int, n_classes: int, prompt_length: int
) -> HandcraftedPrompt:
    """ドメイン m の手作りプロンプト（全クラス分のトークン列とクラス平均 Ṽ_m）"""
    prompt = HandcraftedPrompt(domain_id=domain_id)
    flats = []
    for j in range(n_classes):
        rows = []
        word_rows = []
        for token in template_tokens():
            if token == CLASS_PLACEHOLDER:
                rows.append(vocab.class_token(j))
            elif token == DOMAIN_PLACEHOLDER:
                rows.append(vocab.domain_token(domain_id))
            else:
                rows.append(vocab.word(token))
                word_rows.append(vocab.word(token))
        prompt.sequences.append(np.array(rows, dtype=np.float64))
        # クラス・ドメイン位置を除いて学習可能部分と長さを揃える
        flats.append(_cycle_to_length(word_rows, prompt_length).reshape(-1))
    prompt.flat = np.mean(flats, axis=0)
    return prompt


def handcrafted_positive(
    vocab: TokenVocab, domain_id: int, n_classes: int, prompt_length: int
) -> np.ndarray:
    """対照損失の正例 Ṽ_m（L·d の平坦ベクトル）"""
    return handcrafted_prompt(vocab, domain_id, n_classes, prompt_length).flat


# ---------------------------------------------------------------------------
# チェックポイント
# ---------------------------------------------------------------------------


def bank_to_dict(bank: PromptBank, seed: int, round_index: int) -> Dict[str, Any]:
    """チェックポイント用の辞書に変換"""
    return {
        "dims": {
            "prompt_length": bank.dims.prompt_length,
            "embed_dim": bank.dims.embed_dim,
            "n_domains": bank.dims.n_domains,
            "n_classes": bank.dims.n_classes,
        },
        "g_prompt": bank.g_prompt.tolist(),
        "d_prompts": [
            {"tokens": dp.tokens.tolist(), "domain_id": dp.domain_id}
            for dp in bank.d_prompts
        ],
        "q_prompt": bank.q_prompt.tolist(),
        "seed": seed,
        "round": round_index,
    }


def save_checkpoint(path: Path, bank: PromptBank, seed: int, round_index: int) -> None:
    """
    プロンプトをJSONで保存します。

    floatは最短往復表現（repr）で書き出すため、読み戻しでビット一致します。
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(bank_to_dict(bank, seed, round_index), f, indent=1)
    logger.info(f"チェックポイントを保存しました: {path}")


def load_checkpoint(path: Path, vocab: TokenVocab) -> Tuple[PromptBank, Dict[str, Any]]:
    """
    チェックポイントを読み込みます。

    Returns:
        (プロンプトバンク, {"seed", "round"})
    """
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    dims = PromptDims(**data["dims"])
    bank = PromptBank(
        g_prompt=np.array(data["g_prompt"], dtype=np.float64),
        d_prompts=[
            DomainPrompt(
                tokens=np.array(entry["tokens"], dtype=np.float64),
                domain_id=int(entry["domain_id"]),
                domain_token=vocab.domain_token(int(entry["domain_id"])),
            )
            for entry in data["d_prompts"]
        ],
        q_prompt=np.array(data["q_prompt"], dtype=np.float64),
        dims=dims,
    )
    return bank, {"seed": data.get("seed"), "round": data.get("round")}
