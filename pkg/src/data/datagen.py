"""
合成データ生成
ドメインシフトを制御できる多ドメイン分類データと、クライアントへの分割

各サンプルは (特徴ベクトル x, クラスID y, 潜在ドメインID) を持ちます。
潜在ドメインIDは問い合わせ精度の評価とドメインラベル使用アブレーションにのみ使います。
"""

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.numerics.rng import Rng
from src.logger import logger

TEST_FRACTION = 0.2


class PartitionMode(str, Enum):
    """クライアント分割モード"""

    ONE_DOMAIN = "one_domain"  # 1クライアント1ドメイン（ドメインは複数クライアントに分散）
    MIXED = "mixed"  # 全ソースをプールしてクラスごとに均等分割


@dataclass
class SampleSet:
    """サンプル集合（特徴、クラスID、潜在ドメインID）"""

    features: np.ndarray  # (n, p)
    labels: np.ndarray  # (n,)
    domains: np.ndarray  # (n,)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            # 空配列は -1 で次元を推定できない
            width = -1 if self.features.size else 0
            self.features = self.features.reshape(len(self.labels), width)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=np.int64)
        if not (len(self.features) == len(self.labels) == len(self.domains)):
            raise ValueError("特徴・ラベル・ドメインの件数が一致しません")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices: Sequence[int]) -> "SampleSet":
        idx = np.asarray(indices, dtype=np.int64)
        return SampleSet(self.features[idx], self.labels[idx], self.domains[idx])

    @classmethod
    def empty(cls, feature_dim: int) -> "SampleSet":
        return cls(np.zeros((0, feature_dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, parts: Sequence["SampleSet"]) -> "SampleSet":
        parts = list(parts)
        if not parts:
            raise ValueError("結合するサンプル集合がありません")
        return cls(
            np.concatenate([p.features for p in parts], axis=0),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.domains for p in parts]),
        )


@dataclass(frozen=True)
class DomainSpec:
    """合成ドメインの仕様"""

    n_domains: int = 4  # M_total
    n_classes: int = 5  # C
    feature_dim: int = 16  # p
    shift: float = 1.5  # γ
    noise: float = 0.4  # σ
    samples_per_pair: int = 60  # (ドメイン, クラス) ごとのサンプル数 n

    def validate(self) -> None:
        if self.n_domains < 1 or self.n_classes < 1 or self.feature_dim < 1:
            raise ValueError(f"ドメイン仕様が不正です: {self}")
        if self.shift < 0.0:
            raise ValueError(f"シフト強度は0以上である必要があります: {self.shift}")
        if self.noise < 0.0:
            raise ValueError(f"ノイズは0以上である必要があります: {self.noise}")
        if self.samples_per_pair < 2:
            raise ValueError(
                f"学習/テスト分割には (ドメイン, クラス) あたり2件以上が必要です: {self.samples_per_pair}"
            )


@dataclass
class DomainDataset:
    """1ドメイン分のデータ（学習/テスト分割済み）"""

    domain_id: int
    train: SampleSet
    test: SampleSet


@dataclass
class GeneratedData:
    """生成結果（プロトタイプとシフトベクトルも保持）"""

    spec: DomainSpec
    prototypes: np.ndarray  # u_j (C, p)
    shifts: np.ndarray  # t_m (M_total, p)
    domains: List[DomainDataset] = field(default_factory=list)

    def pair_mean(self, class_id: int, domain_id: int) -> np.ndarray:
        """μ_{j,m} = u_j + γ·t_m"""
        return self.prototypes[class_id] + self.spec.shift * self.shifts[domain_id]


@dataclass
class ClientShard:
    """1クライアント分のローカルデータ"""

    client_id: int
    samples: SampleSet
    source_domains: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.samples)


def train_test_counts(samples_per_pair: int) -> Tuple[int, int]:
    """(ドメイン, クラス) ごとの学習・テスト件数（テストは少なくとも1件）"""
    n_test = max(1, int(round(TEST_FRACTION * samples_per_pair)))
    return samples_per_pair - n_test, n_test


def min_shard_size(
    samples_per_pair: int, n_sources: int, n_clients: int, mode: PartitionMode
) -> int:
    """partition 後に最も少ないクライアントが持つ、1クラスあたりのサンプル数"""
    n_train, _ = train_test_counts(samples_per_pair)
    if PartitionMode(mode) == PartitionMode.ONE_DOMAIN:
        clients_per_domain = -(-n_clients // n_sources)
        return n_train // clients_per_domain
    return (n_train * n_sources) // n_clients


def generate(spec: DomainSpec, seed: int) -> GeneratedData:
    """
    ドメインごとのデータを生成し、(ドメイン, クラス) ごとに 80/20 で分割します。

    x = μ_{j,m} + σ·ε（ε は標準正規乱数）

    Args:
        spec: ドメイン仕様
        seed: シード

    Returns:
        生成データ
    """
    spec.validate()
    root = Rng(seed).child("datagen")
    prototypes = np.array(
        [root.child(f"prototype/{j}").unit_vector(spec.feature_dim) for j in range(spec.n_classes)]
    )
    shifts = np.array(
        [root.child(f"shift/{m}").unit_vector(spec.feature_dim) for m in range(spec.n_domains)]
    )
    data = GeneratedData(spec=spec, prototypes=prototypes, shifts=shifts)

    n = spec.samples_per_pair
    n_train, n_test = train_test_counts(n)

    for m in range(spec.n_domains):
        train_parts, test_parts = [], []
        for j in range(spec.n_classes):
            mean = data.pair_mean(j, m)
            eps = root.child(f"noise/{m}/{j}").normal((n, spec.feature_dim))
            x = mean + spec.noise * eps
            order = root.child(f"split/{m}/{j}").permutation(n)
            labels = np.full(n, j)
            domains = np.full(n, m)
            pair = SampleSet(x, labels, domains)
            train_parts.append(pair.subset(order[:n_train]))
            test_parts.append(pair.subset(order[n_train:]))
        data.domains.append(
            DomainDataset(m, SampleSet.concat(train_parts), SampleSet.concat(test_parts))
        )

    logger.info(
        f"合成データを生成しました: ドメイン{spec.n_domains}, クラス{spec.n_classes}, "
        f"学習{n_train}/テスト{n_test} (ペアあたり)"
    )
    return data


def leave_one_out(
    datasets: Sequence[DomainDataset], target: int
) -> Tuple[List[DomainDataset], SampleSet]:
    """
    1ドメインをターゲットとして除外します。

    Returns:
        (ソースドメインのリスト, ターゲットのテスト集合)。ターゲットの学習分割は捨てます。
    """
    if len(datasets) < 2:
        raise ValueError(f"leave-one-domain-out には2ドメイン以上が必要です: {len(datasets)}")
    ids = [d.domain_id for d in datasets]
    if target not in ids:
        raise ValueError(f"ターゲットドメインが存在しません: {target} (候補 {ids})")
    sources = [d for d in datasets if d.domain_id != target]
    target_test = next(d for d in datasets if d.domain_id == target).test
    return sources, target_test


def _split_evenly(indices: np.ndarray, n_parts: int) -> List[np.ndarray]:
    return [np.asarray(part, dtype=np.int64) for part in np.array_split(indices, n_parts)]


def partition(
    sources: Sequence[DomainDataset], n_clients: int, mode: PartitionMode, seed: int
) -> List[ClientShard]:
    """
    ソースの学習データを K クライアントに分割します。

    - one_domain: ドメインをラウンドロビンで割り当て、各ドメインのデータをクラスごとに均等分割
    - mixed: 全ソースをプールしてクラスごとに K クライアントへ均等分割

    Args:
        sources: ソースドメイン
        n_clients: クライアント数 K
        mode: 分割モード
        seed: シード
    """
    mode = PartitionMode(mode)
    n_sources = len(sources)
    if n_sources < 1:
        raise ValueError("ソースドメインがありません")
    if mode == PartitionMode.ONE_DOMAIN and n_clients < n_sources:
        raise ValueError(
            f"one_domain モードではクライアント数がドメイン数以上である必要があります: K={n_clients}, M={n_sources}"
        )
    if n_clients < 1:
        raise ValueError(f"クライアント数は1以上である必要があります: {n_clients}")

    root = Rng(seed).child("partition")
    if mode == PartitionMode.ONE_DOMAIN:
        groups = [(src, [k for k in range(n_clients) if k % n_sources == s]) for s, src in enumerate(sources)]
        pools = [(src.domain_id, src.train, clients) for src, clients in groups]
    else:
        pooled = SampleSet.concat([src.train for src in sources])
        pools = [(-1, pooled, list(range(n_clients)))]

    shards_data: Dict[int, List[SampleSet]] = {k: [] for k in range(n_clients)}
    for pool_id, samples, clients in pools:
        for j in np.unique(samples.labels):
            class_idx = np.flatnonzero(samples.labels == j)
            order = class_idx[root.child(f"{pool_id}/{int(j)}").permutation(len(class_idx))]
            for client, part in zip(clients, _split_evenly(order, len(clients))):
                shards_data[client].append(samples.subset(part))

    feature_dim = sources[0].train.features.shape[1]
    shards = []
    for k in range(n_clients):
        parts = [p for p in shards_data[k] if len(p) > 0]
        samples = SampleSet.concat(parts) if parts else SampleSet.empty(feature_dim)
        composition = tuple(sorted(int(d) for d in np.unique(samples.domains)))
        shards.append(ClientShard(client_id=k, samples=samples, source_domains=composition))

    logger.info(
        f"{n_clients}クライアントに分割しました (mode={mode.value}): "
        f"サンプル数 {[len(s) for s in shards]}"
    )
    return shards


def _samples_to_dict(samples: SampleSet) -> Dict[str, Any]:
    return {
        "x": samples.features.tolist(),
        "y": samples.labels.tolist(),
        "domain": samples.domains.tolist(),
    }


def dump_datasets(path: Path, data: GeneratedData) -> None:
    """生成データをJSONで書き出します"""
    payload: Dict[str, Any] = {
        "spec": asdict(data.spec),
        "domains": [
            {
                "domain_id": d.domain_id,
                "train": _samples_to_dict(d.train),
                "test": _samples_to_dict(d.test),
            }
            for d in data.domains
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    logger.info(f"データセットを書き出しました: {path}")
