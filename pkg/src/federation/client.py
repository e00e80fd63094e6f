"""
クライアント側のローカル学習
Q-Promptの更新、潜在ドメインの問い合わせ、G-Prompt/D-Promptsの同時更新
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.config.experiment import ExperimentConfig, TouchMode
from src.data.datagen import ClientShard, SampleSet
from src.errors import NonFiniteError, TrainingError
from src.federation.momentum import MomentumAverager, momentum_update
from src.logger import logger
from src.numerics.kernels import ClampCounter
from src.numerics.optim import AdamState, adam_step
from src.numerics.rng import Rng
from src.prompting.encoders import FrozenEncoders
from src.prompting.objectives import (
    local_objective,
    loss_Q_and_grad,
    loss_Qmatch_and_grad,
    route_batch,
)
from src.prompting.prompts import PromptBank


@dataclass(frozen=True)
class ClientOptions:
    """ローカル学習のオプション"""

    batch_size: int = 16
    lr: float = 5e-4
    tau_cont: float = 1.0
    q_match_weight: float = 1.0
    contrastive: bool = True
    use_mse: bool = True
    use_kl: bool = True
    mse_all_classes: bool = False
    static_query: bool = False
    no_d_prompts: bool = False
    use_domain_labels: bool = False
    touch_mode: TouchMode = TouchMode.STRUCTURAL

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "ClientOptions":
        return cls(
            batch_size=config.batch_size,
            lr=config.lr,
            tau_cont=config.tau_cont,
            q_match_weight=config.q_match_weight,
            contrastive=not config.no_contrastive,
            use_mse=not config.no_mse,
            use_kl=not config.no_kl,
            mse_all_classes=config.mse_all_classes,
            static_query=config.static_query,
            no_d_prompts=config.no_d_prompts,
            use_domain_labels=config.use_domain_labels,
            touch_mode=TouchMode(config.touch_mode),
        )

    @property
    def updates_query(self) -> bool:
        return not (self.static_query or self.no_d_prompts)


@dataclass
class ClientState:
    """
    クライアントの永続状態

    Q-Promptとそのモメンタム平均、Adam状態はラウンドをまたいでクライアント内に残ります。
    """

    client_id: int
    shard: ClientShard
    template: PromptBank  # 次元とドメイントークンの参照元
    q_prompt: np.ndarray
    q_momentum: MomentumAverager
    seed: int
    adam: Dict[str, AdamState] = field(default_factory=dict)
    iteration: int = 0
    epoch: int = 0
    cursor: int = 0
    _order: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def create(
        cls, shard: ClientShard, template: PromptBank, seed: int, q_horizon: int, beta: float
    ) -> "ClientState":
        q_prompt = template.q_prompt.copy()
        return cls(
            client_id=shard.client_id,
            shard=shard,
            template=template,
            q_prompt=q_prompt,
            q_momentum=MomentumAverager.start(q_prompt, q_horizon, beta),
            seed=seed,
        )

    @property
    def n_samples(self) -> int:
        return len(self.shard)

    def adam_for(self, name: str, params: np.ndarray, lr: float) -> AdamState:
        if name not in self.adam:
            self.adam[name] = AdamState.zeros_like(params, lr=lr, name=f"client{self.client_id}/{name}")
        return self.adam[name]

    def _shuffle(self) -> np.ndarray:
        stream = Rng(self.seed).child(f"client/{self.client_id}/shuffle/{self.epoch}")
        return stream.permutation(self.n_samples)

    def next_batch(self, batch_size: int) -> SampleSet:
        """シャッフル順を巡回してバッチを取り出します（1周ごとに再シャッフル）"""
        picked: List[int] = []
        while len(picked) < batch_size:
            if self._order is None:
                self._order = self._shuffle()
            take = min(batch_size - len(picked), self.n_samples - self.cursor)
            picked.extend(int(i) for i in self._order[self.cursor : self.cursor + take])
            self.cursor += take
            if self.cursor >= self.n_samples:
                self.epoch += 1
                self.cursor = 0
                self._order = None
        return self.shard.samples.subset(picked)


@dataclass
class ClientRoundStats:
    """1ラウンド分のクライアント統計（メトリクス用）"""

    loss_g: List[float] = field(default_factory=list)
    loss_d: List[float] = field(default_factory=list)
    loss_q: List[float] = field(default_factory=list)
    loss_q_match: List[float] = field(default_factory=list)
    query_correct: int = 0
    query_total: int = 0
    clamp_events: int = 0


@dataclass
class ClientUpdate:
    """
    クライアントからサーバーへのアップロード

    Q-Promptは含みません。
    """

    client_id: int
    round_index: int
    g_prompt: np.ndarray
    d_tokens: List[np.ndarray]
    touched: List[bool]
    n_samples: int
    stats: ClientRoundStats = field(default_factory=ClientRoundStats, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        """送信内容の辞書（統計はローカル記録のため含めない）"""
        return {
            "client_id": self.client_id,
            "round": self.round_index,
            "g_prompt": self.g_prompt.tolist(),
            "d_prompts": [t.tolist() for t in self.d_tokens],
            "touched": list(self.touched),
            "n_samples": self.n_samples,
        }


def _ensure_finite_loss(value: float, what: str) -> None:
    if not np.isfinite(value):
        raise NonFiniteError(f"{what} が有限ではありません: {value}")


def _routes_from_labels(batch: SampleSet, domain_ids: Sequence[int]) -> List[int]:
    index = {d: i for i, d in enumerate(domain_ids)}
    return [index[int(d)] for d in batch.domains]


def _local_iteration(
    client: ClientState,
    bank: PromptBank,
    encoders: FrozenEncoders,
    lam: float,
    options: ClientOptions,
    stats: ClientRoundStats,
    touched: List[bool],
) -> PromptBank:
    batch = client.next_batch(options.batch_size)
    counter = ClampCounter()

    # (1) Q-Prompt
    if options.updates_query:
        q_result = loss_Q_and_grad(
            bank,
            client.q_momentum.value,
            encoders,
            batch,
            use_mse=options.use_mse,
            use_kl=options.use_kl,
            mse_all_classes=options.mse_all_classes,
            counter=counter,
        )
        grad_q = q_result.grad
        stats.loss_q.append(q_result.value)
        if options.q_match_weight > 0.0:
            match = loss_Qmatch_and_grad(bank, encoders, batch, counter)
            grad_q = grad_q + options.q_match_weight * match.grad
            stats.loss_q_match.append(match.value)
            _ensure_finite_loss(match.value, "L_match")
        _ensure_finite_loss(q_result.value, "L_Q")
        adam = client.adam_for("Q", client.q_prompt, options.lr)
        client.q_prompt = adam_step(adam, client.q_prompt, grad_q)
        momentum_update(client.q_momentum, client.q_prompt, client.iteration + 1)
        bank = bank.with_prompts(q_prompt=client.q_prompt)

    # (2) ドメイン問い合わせ
    if options.no_d_prompts:
        routes = [0] * len(batch)
        lam = 0.0
    else:
        if options.use_domain_labels:
            routes = _routes_from_labels(batch, bank.domain_ids)
        else:
            routes = route_batch(bank, encoders, batch)
        for route, latent in zip(routes, batch.domains):
            stats.query_correct += int(bank.domain_ids[route] == int(latent))
        stats.query_total += len(routes)

    # (3) G-Prompt / D-Prompts の同時更新
    result = local_objective(
        bank,
        encoders,
        batch,
        lam,
        routes,
        tau_cont=options.tau_cont,
        contrastive=options.contrastive,
        counter=counter,
    )
    report = result.report
    _ensure_finite_loss(report.total, "L")
    stats.loss_g.append(report.loss_g)
    if result.grads_d:
        stats.loss_d.append(report.loss_d)

    g_prompt = adam_step(client.adam_for("G", bank.g_prompt, options.lr), bank.g_prompt, result.grad_g)
    d_tokens = [dp.tokens for dp in bank.d_prompts]
    for m, grad in result.grads_d.items():
        adam = client.adam_for(f"D/{bank.domain_ids[m]}", d_tokens[m], options.lr)
        d_tokens[m] = adam_step(adam, d_tokens[m], grad)
        touched[m] = True

    stats.clamp_events += counter.count
    logger.debug(
        f"client={client.client_id} iter={client.iteration}: L={report.total:.6f} "
        f"L_G={report.loss_g:.6f} L_D={report.loss_d:.6f} routes={sorted(set(routes))}"
    )
    return bank.with_prompts(g_prompt=g_prompt, d_tokens=d_tokens)


def run_client(
    client: ClientState,
    g_prompt: np.ndarray,
    d_tokens: Sequence[np.ndarray],
    encoders: FrozenEncoders,
    local_iterations: int,
    lam: float,
    options: Optional[ClientOptions] = None,
    round_index: int = 0,
) -> ClientUpdate:
    """
    ダウンロードしたプロンプトから T 回のローカル更新を行います。

    Args:
        client: クライアント状態（Q-Prompt、Adam状態、バッチ位置が更新されます）
        g_prompt: ダウンロードした V^G
        d_tokens: ダウンロードした V^D（ドメイン順）
        encoders: 凍結エンコーダー
        local_iterations: ローカル反復数 T
        lam: 重み係数 λ
        options: ローカル学習オプション
        round_index: ラウンド番号（診断用）

    Returns:
        アップロード内容

    Raises:
        TrainingError: シャードが空、または学習中に失敗した場合
    """
    options = options or ClientOptions()
    if client.n_samples == 0:
        raise TrainingError("ローカルデータが空です", client.client_id, round_index=round_index)

    downloaded = [np.array(t, dtype=np.float64, copy=True) for t in d_tokens]
    bank = client.template.with_prompts(
        g_prompt=np.array(g_prompt, dtype=np.float64, copy=True),
        d_tokens=[t.copy() for t in downloaded],
        q_prompt=client.q_prompt,
    )
    touched = [False] * len(downloaded)
    stats = ClientRoundStats()

    for t in range(local_iterations):
        try:
            bank = _local_iteration(client, bank, encoders, lam, options, stats, touched)
        except TrainingError:
            raise
        except Exception as e:
            logger.error(
                f"ローカル学習に失敗しました: round={round_index}, client={client.client_id}, iteration={t}: {e}"
            )
            raise TrainingError(str(e), client.client_id, t, round_index) from e
        client.iteration += 1

    new_tokens = [dp.tokens for dp in bank.d_prompts]
    if options.touch_mode == TouchMode.NUMERIC:
        touched = [bool(np.any(new != old)) for new, old in zip(new_tokens, downloaded)]

    return ClientUpdate(
        client_id=client.client_id,
        round_index=round_index,
        g_prompt=bank.g_prompt,
        d_tokens=new_tokens,
        touched=touched,
        n_samples=client.n_samples,
        stats=stats,
    )
