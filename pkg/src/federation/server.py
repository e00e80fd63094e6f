"""
サーバー側の処理
クライアント選択、G-Prompt平均、ドメインごとの集約、ベータモメンタム平均、学習ラウンドの実行
"""

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from src.config.experiment import ExperimentConfig
from src.data.datagen import ClientShard
from src.errors import AggregationError, TrainingError
from src.federation.client import ClientOptions, ClientState, ClientUpdate, run_client
from src.federation.momentum import MomentumAverager, momentum_update
from src.logger import logger
from src.numerics.rng import Rng
from src.prompting.encoders import FrozenEncoders
from src.prompting.prompts import PromptBank, PromptDims, init_prompt_bank


def sample_clients(rng: Rng, n_clients: int, n_selected: int) -> List[int]:
    """
    K クライアントから H 個を非復元抽出し、昇順で返します。

    Raises:
        ValueError: H が 1〜K の範囲外の場合
    """
    if not 1 <= n_selected <= n_clients:
        raise ValueError(f"選択数が不正です: H={n_selected}, K={n_clients}")
    return sorted(rng.choice_without_replacement(n_clients, n_selected))


def _sorted_updates(updates: Sequence[ClientUpdate]) -> List[ClientUpdate]:
    return sorted(updates, key=lambda u: u.client_id)


def aggregate_gprompt(prev: np.ndarray, updates: Sequence[ClientUpdate]) -> np.ndarray:
    """
    V^G ← Σ |D_i|·V^G_i / Σ |D_i|（クライアントID昇順で加算）

    Raises:
        AggregationError: 更新がない、または重みの合計がゼロの場合
    """
    updates = _sorted_updates(updates)
    if not updates:
        raise AggregationError("集約する更新がありません")
    total = float(sum(u.n_samples for u in updates))
    if total <= 0.0:
        raise AggregationError("G-Prompt集約の重みの合計がゼロです")
    result = np.zeros_like(np.asarray(prev, dtype=np.float64))
    for u in updates:
        result = result + (u.n_samples / total) * u.g_prompt
    return result


def aggregate_dprompts(
    prev: Sequence[np.ndarray], updates: Sequence[ClientUpdate]
) -> List[np.ndarray]:
    """
    ドメインごとの差分の加重平均

    V^D_m ← V^D_m + Σ_i (|D_i|·𝓘_{m,i}) ΔV_{m,i} / Σ_i (|D_i|·𝓘_{m,i})

    どのクライアントも更新しなかったドメインは前の値をそのまま返します。
    """
    updates = _sorted_updates(updates)
    result = []
    for m, base in enumerate(prev):
        base = np.asarray(base, dtype=np.float64)
        contributors = [u for u in updates if u.touched[m]]
        total = float(sum(u.n_samples for u in contributors))
        if not contributors or total <= 0.0:
            result.append(base.copy())
            continue
        if len(contributors) == 1:
            result.append(np.array(contributors[0].d_tokens[m], dtype=np.float64, copy=True))
            continue
        delta = np.zeros_like(base)
        for u in contributors:
            delta = delta + (u.n_samples / total) * (u.d_tokens[m] - base)
        result.append(base + delta)
    return result


@dataclass
class ServerState:
    """サーバーの状態"""

    round_index: int
    g_prompt: np.ndarray
    d_tokens: List[np.ndarray]
    d_momentum: List[MomentumAverager]
    rng: Rng
    template: PromptBank

    def downloaded_d_tokens(self, use_momentum: bool) -> List[np.ndarray]:
        if use_momentum:
            return [avg.value for avg in self.d_momentum]
        return self.d_tokens

    def raw_bank(self) -> PromptBank:
        return self.template.with_prompts(g_prompt=self.g_prompt, d_tokens=self.d_tokens)

    def inference_bank(self) -> PromptBank:
        """推論用（V^G はそのまま、D-Promptsはモメンタム平均）"""
        return self.template.with_prompts(
            g_prompt=self.g_prompt, d_tokens=[avg.value for avg in self.d_momentum]
        )


@dataclass
class TrainingResult:
    """学習結果"""

    state: ServerState
    initial_bank: PromptBank
    clients: Dict[int, ClientState]
    metrics: List[Dict[str, Any]] = field(default_factory=list)
    timings: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def inference_bank(self) -> PromptBank:
        return self.state.inference_bank()


def _mean_or_none(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def round_metrics(
    round_index: int, updates: Sequence[ClientUpdate], n_domains: int
) -> Dict[str, Any]:
    """1ラウンド分のメトリクス記録"""
    per_client_g, per_client_d, per_client_q = [], [], []
    correct = total = clamps = 0
    for u in _sorted_updates(updates):
        s = u.stats
        if s.loss_g:
            per_client_g.append(float(np.mean(s.loss_g)))
        if s.loss_d:
            per_client_d.append(float(np.mean(s.loss_d)))
        if s.loss_q:
            per_client_q.append(float(np.mean(s.loss_q)))
        correct += s.query_correct
        total += s.query_total
        clamps += s.clamp_events
    return {
        "round": round_index,
        "mean_loss_g": _mean_or_none(per_client_g),
        "mean_loss_d": _mean_or_none(per_client_d),
        "mean_loss_q": _mean_or_none(per_client_q),
        "touch_counts": [sum(int(u.touched[m]) for u in updates) for m in range(n_domains)],
        "query_accuracy": correct / total if total else None,
        "clamp_events": clamps,
    }


def run_training(
    config: ExperimentConfig,
    encoders: FrozenEncoders,
    shards: Sequence[ClientShard],
    domain_ids: Sequence[int],
    on_round: Optional[Callable[[int, ServerState], None]] = None,
) -> TrainingResult:
    """
    R ラウンドの連合学習を実行します。

    各ラウンドで H クライアントを選び、ローカル学習、G-Prompt平均、D-Prompt集約、
    ドメインごとのモメンタム平均（スロット r+1）を行います。

    Args:
        config: 実験設定
        encoders: 凍結エンコーダー
        shards: 全 K クライアントのシャード（client_id 順）
        domain_ids: ソースドメインID（D-Promptの並び順）
        on_round: 集約後に (ラウンド番号, サーバー状態) で呼ばれるコールバック

    Returns:
        学習結果（推論用プロンプト、メトリクス、クライアント状態）
    """
    if len(shards) != config.n_clients:
        raise ValueError(f"シャード数が K と一致しません: {len(shards)} != {config.n_clients}")

    dims = PromptDims(
        prompt_length=config.prompt_length,
        embed_dim=config.embed_dim,
        n_domains=len(domain_ids),
        n_classes=config.n_classes,
    )
    initial = init_prompt_bank(dims, domain_ids, encoders.vocab, config.seed)
    template = initial.copy()
    state = ServerState(
        round_index=0,
        g_prompt=initial.g_prompt.copy(),
        d_tokens=[dp.tokens.copy() for dp in initial.d_prompts],
        d_momentum=[
            MomentumAverager.start(dp.tokens, config.rounds, config.beta) for dp in initial.d_prompts
        ],
        rng=Rng(config.seed).child("server/sampling"),
        template=template,
    )
    q_horizon = config.rounds * config.local_iterations
    clients = {
        shard.client_id: ClientState.create(shard, template, config.seed, q_horizon, config.beta)
        for shard in shards
    }
    options = ClientOptions.from_config(config)
    result = TrainingResult(state=state, initial_bank=initial, clients=clients)

    logger.info(
        f"学習を開始します: K={config.n_clients}, H={config.clients_per_round}, "
        f"R={config.rounds}, T={config.local_iterations}, M={len(domain_ids)}"
    )
    for r in range(config.rounds):
        started = time.perf_counter()
        selected = sample_clients(state.rng, config.n_clients, config.clients_per_round)
        d_download = state.downloaded_d_tokens(config.download_momentum)

        updates = []
        for k in selected:
            try:
                updates.append(
                    run_client(
                        clients[k],
                        state.g_prompt,
                        d_download,
                        encoders,
                        config.local_iterations,
                        config.lambda_weight,
                        options,
                        round_index=r,
                    )
                )
            except TrainingError as e:
                logger.error(f"ラウンド{r}を中断します: {e}")
                raise

        state.g_prompt = aggregate_gprompt(state.g_prompt, updates)
        state.d_tokens = aggregate_dprompts(state.d_tokens, updates)
        for avg, tokens in zip(state.d_momentum, state.d_tokens):
            momentum_update(avg, tokens, r + 1)
        state.round_index = r + 1

        record = round_metrics(r, updates, len(domain_ids))
        result.metrics.append(record)
        result.timings.append({"round": r, "wall_time": time.perf_counter() - started})
        logger.info(
            f"ラウンド {r + 1}/{config.rounds}: clients={selected}, "
            f"L_G={record['mean_loss_g']}, touch={record['touch_counts']}, "
            f"query_acc={record['query_accuracy']}"
        )
        if on_round:
            on_round(r, state)

    logger.info("学習が完了しました")
    return result
