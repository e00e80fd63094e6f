"""
実験設定
コード修正なしで実験条件を切り替え可能

ExperimentConfig の設定方法

1. 設定ファイル（JSON、フラットなキー）
   - 省略したキーはデフォルト値（基準設定のプリセット "reference"）になります
   - "preset" キーで土台にするプリセットを選べます（"reference" または "desk"）
   - 未知のキーはエラーになります

2. 主なフィールド
   - seed: 乱数シード（データ、エンコーダー、プロンプト初期値、クライアント選択すべての元）
   - embed_dim / hidden_dim / feature_dim / prompt_length / tau: エンコーダーの次元と温度
   - encoder_alignment: 画像エンコーダーをクラス名・ドメイン名の埋め込みへ整列させる強さ（0〜1、0 で整列なし）
   - n_domains / n_classes / shift / noise / samples_per_pair: 合成データ
   - n_clients (K) / clients_per_round (H) / rounds (R) / local_iterations (T)
   - batch_size (b) / lambda_weight (λ) / beta (β) / lr: 学習
   - partition: "one_domain" または "mixed"
   - target: ターゲットドメイン番号、または "sweep"（全ドメインを順に）

3. アブレーションフラグ（すべてデフォルト False）
   - no_d_prompts: G-Promptのみで学習・推論
   - no_contrastive: D-Promptの対照損失を外す
   - static_query: Q-Promptを手作りプロンプトのまま固定
   - no_ensemble: 主評価を最大重みドメインのみの推論にする
   - no_kl / no_mse: Q-Promptの自己整合損失の各項を外す
   - use_domain_labels: 問い合わせの代わりに真のドメインラベルでルーティング

4. 追加オプション
   - q_match_weight: Q-Promptのクラスマッチング損失の重み（0 で自己整合損失のみ）
   - mse_all_classes: L_mse を全クラスで合計
   - download_momentum: クライアントがモメンタム平均のD-Promptをダウンロード
   - touch_mode: "structural"（ルーティング有無）または "numeric"（|ΔV| > 0）
"""

from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Dict, List, Union

from src.data.datagen import DomainSpec, PartitionMode, min_shard_size
from src.errors import ConfigError
from src.prompting.encoders import EncoderDims

SWEEP_TARGET = "sweep"


class TouchMode(str, Enum):
    """D-Promptの更新判定方法"""

    STRUCTURAL = "structural"
    NUMERIC = "numeric"


class AblationFlag(str, Enum):
    """アブレーションフラグ"""

    NO_D_PROMPTS = "no_d_prompts"
    NO_CONTRASTIVE = "no_contrastive"
    STATIC_QUERY = "static_query"
    NO_ENSEMBLE = "no_ensemble"
    NO_KL = "no_kl"
    NO_MSE = "no_mse"
    USE_DOMAIN_LABELS = "use_domain_labels"


@dataclass(frozen=True)
class ExperimentConfig:
    """実験設定（デフォルトは基準設定）"""

    seed: int = 0

    # エンコーダー
    embed_dim: int = 32
    hidden_dim: int = 64
    feature_dim: int = 16
    prompt_length: int = 4
    tau: float = 0.07
    encoder_alignment: float = 1.0

    # 合成データ
    n_domains: int = 4
    n_classes: int = 5
    shift: float = 1.5
    noise: float = 0.4
    samples_per_pair: int = 60

    # 連合学習
    n_clients: int = 20
    clients_per_round: int = 5
    rounds: int = 100
    local_iterations: int = 1
    batch_size: int = 16
    lambda_weight: float = 1.0
    beta: float = 0.2
    lr: float = 5e-4
    tau_cont: float = 1.0
    q_match_weight: float = 1.0
    partition: str = PartitionMode.ONE_DOMAIN.value

    # アブレーション
    no_d_prompts: bool = False
    no_contrastive: bool = False
    static_query: bool = False
    no_ensemble: bool = False
    no_kl: bool = False
    no_mse: bool = False
    use_domain_labels: bool = False

    # 追加オプション
    mse_all_classes: bool = False
    download_momentum: bool = False
    touch_mode: str = TouchMode.STRUCTURAL.value

    target: Union[int, str] = 0

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @property
    def is_sweep(self) -> bool:
        return self.target == SWEEP_TARGET

    def targets(self) -> List[int]:
        """評価するターゲットドメインの一覧"""
        if self.is_sweep:
            return list(range(self.n_domains))
        return [int(self.target)]

    def for_target(self, target: int) -> "ExperimentConfig":
        return replace(self, target=int(target))

    def active_ablations(self) -> List[AblationFlag]:
        return [flag for flag in AblationFlag if getattr(self, flag.value)]

    def domain_spec(self) -> DomainSpec:
        return DomainSpec(
            n_domains=self.n_domains,
            n_classes=self.n_classes,
            feature_dim=self.feature_dim,
            shift=self.shift,
            noise=self.noise,
            samples_per_pair=self.samples_per_pair,
        )

    def encoder_dims(self) -> EncoderDims:
        return EncoderDims(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            feature_dim=self.feature_dim,
            prompt_length=self.prompt_length,
            tau=self.tau,
        )

    def validate(self) -> None:
        """
        値を検証します。

        Raises:
            ConfigError: 不正なフィールドがある場合（最初に見つかったもの）
        """
        if self.seed < 0:
            raise ConfigError("seed", f"0以上である必要があります: {self.seed}")
        for name in ("embed_dim", "hidden_dim", "feature_dim", "prompt_length"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"1以上である必要があります: {getattr(self, name)}")
        for name in ("tau", "tau_cont", "beta", "lr"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(name, f"正である必要があります: {getattr(self, name)}")
        if self.n_domains < 2:
            raise ConfigError(
                "n_domains", f"leave-one-domain-out には2以上が必要です: {self.n_domains}"
            )
        if self.n_classes < 2:
            raise ConfigError("n_classes", f"2以上である必要があります: {self.n_classes}")
        for name in ("shift", "noise", "lambda_weight", "q_match_weight"):
            if getattr(self, name) < 0.0:
                raise ConfigError(name, f"0以上である必要があります: {getattr(self, name)}")
        if not 0.0 <= self.encoder_alignment <= 1.0:
            raise ConfigError(
                "encoder_alignment", f"0〜1である必要があります: {self.encoder_alignment}"
            )
        if self.samples_per_pair < 2:
            raise ConfigError(
                "samples_per_pair", f"学習/テスト分割には2以上が必要です: {self.samples_per_pair}"
            )
        if self.n_clients < 1:
            raise ConfigError("n_clients", f"1以上である必要があります: {self.n_clients}")
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise ConfigError(
                "clients_per_round",
                f"1以上 n_clients({self.n_clients}) 以下である必要があります: {self.clients_per_round}",
            )
        for name in ("rounds", "local_iterations"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"0以上である必要があります: {getattr(self, name)}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"1以上である必要があります: {self.batch_size}")

        try:
            mode = PartitionMode(self.partition)
        except ValueError:
            raise ConfigError(
                "partition", f"{[m.value for m in PartitionMode]} のいずれかを指定してください: {self.partition}"
            ) from None
        if mode == PartitionMode.ONE_DOMAIN and self.n_clients < self.n_domains - 1:
            raise ConfigError(
                "n_clients",
                f"one_domain ではソースドメイン数({self.n_domains - 1})以上が必要です: {self.n_clients}",
            )
        if min_shard_size(self.samples_per_pair, self.n_domains - 1, self.n_clients, mode) < 1:
            raise ConfigError(
                "samples_per_pair",
                f"学習データのないクライアントができます: samples_per_pair={self.samples_per_pair}, "
                f"n_clients={self.n_clients}, partition={mode.value}",
            )
        try:
            TouchMode(self.touch_mode)
        except ValueError:
            raise ConfigError(
                "touch_mode", f"{[m.value for m in TouchMode]} のいずれかを指定してください: {self.touch_mode}"
            ) from None

        if isinstance(self.target, bool) or not (
            self.target == SWEEP_TARGET
            or (isinstance(self.target, int) and 0 <= self.target < self.n_domains)
        ):
            raise ConfigError(
                "target", f"0〜{self.n_domains - 1} または \"{SWEEP_TARGET}\" を指定してください: {self.target}"
            )


# プリセット
PRESETS: Dict[str, ExperimentConfig] = {
    "reference": ExperimentConfig(),
    "desk": ExperimentConfig(n_clients=12, clients_per_round=5, rounds=40, lr=2e-3),
}

DEFAULT_PRESET = "reference"


def get_preset(name: str) -> ExperimentConfig:
    """プリセットを取得"""
    if name not in PRESETS:
        raise ConfigError("preset", f"未知のプリセットです: {name} (候補 {sorted(PRESETS)})")
    return PRESETS[name]
