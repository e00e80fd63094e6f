"""
学習目的関数
各損失の値と、プロンプトトークンに関する手書き勾配、およびドメイン問い合わせ規則

勾配は softmax → コサイン類似度 → テキストエンコーダー逆伝播 → プロンプト行 の順に流れます。
クラス・ドメイントークンの位置に返る勾配は破棄します。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.data.datagen import SampleSet
from src.errors import DegenerateInputError
from src.numerics.kernels import (
    PROBABILITY_FLOOR,
    ClampCounter,
    cosine_sim,
    cosine_sim_grad,
    cross_entropy,
    kl_div,
    mse,
    softmax_temp,
)
from src.prompting.encoders import FrozenEncoders
from src.prompting.prompts import (
    PromptBank,
    PromptKind,
    assemble_text_input,
    handcrafted_positive,
)

DEFAULT_TAU_CONT = 1.0


@dataclass
class ObjectiveResult:
    """損失値、勾配、内訳"""

    value: float
    grad: np.ndarray
    terms: Dict[str, float] = field(default_factory=dict)


@dataclass
class BatchLossReport:
    """1バッチ分の損失の内訳"""

    loss_g: float = 0.0
    loss_d: float = 0.0  # サンプル数で重み付けした L_D の平均
    loss_d_ce: Dict[int, float] = field(default_factory=dict)
    loss_d_cont: Dict[int, float] = field(default_factory=dict)
    loss_q_mse: float = 0.0
    loss_q_kl: float = 0.0
    loss_q_match: float = 0.0
    selected_domains: List[int] = field(default_factory=list)
    clamp_events: int = 0
    total: float = 0.0

    @property
    def loss_q(self) -> float:
        return self.loss_q_mse + self.loss_q_kl


@dataclass
class LocalObjectiveResult:
    """結合目的関数の結果（G-Prompt勾配とルーティングされたD-Prompt勾配）"""

    report: BatchLossReport
    grad_g: np.ndarray
    grads_d: Dict[int, np.ndarray]

    @property
    def touched(self) -> List[int]:
        return sorted(self.grads_d.keys())


# ---------------------------------------------------------------------------
# 共通部品
# ---------------------------------------------------------------------------


def _normalize_rows(mat: np.ndarray, what: str) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"{what} にノルムがゼロの埋め込みがあります")
    return mat / norms[:, None], norms


def _cosine_matrix(images: np.ndarray, texts: np.ndarray):
    """S[i, j] = cos(I_i, Z_j) と逆伝播用の中間値"""
    img_n, _ = _normalize_rows(images, "画像埋め込み")
    txt_n, txt_norms = _normalize_rows(texts, "テキスト埋め込み")
    return img_n @ txt_n.T, img_n, txt_n, txt_norms


def _cosine_backward(grad_s, sims, img_n, txt_n, txt_norms) -> np.ndarray:
    """dL/dS から dL/dZ を計算（画像側は凍結）"""
    weighted = (grad_s * sims).sum(axis=0)
    return (grad_s.T @ img_n - weighted[:, None] * txt_n) / txt_norms[:, None]


def _backprop_prompt(
    encoders: FrozenEncoders, sequences: Sequence[np.ndarray], grad_z: np.ndarray, prompt_length: int
) -> np.ndarray:
    """各テキスト埋め込みの勾配をプロンプト行（先頭 L 行）へ戻して合計"""
    grad = np.zeros((prompt_length, encoders.dims.embed_dim))
    for seq, gz in zip(sequences, grad_z):
        if not np.any(gz):
            continue
        grad += encoders.encode_text_backward(seq, gz)[:prompt_length]
    return grad


def _text_embeddings(
    bank: PromptBank,
    encoders: FrozenEncoders,
    kind: PromptKind,
    domain_index: Optional[int] = None,
) -> Tuple[List[np.ndarray], np.ndarray]:
    """全クラス分の入力トークン列とテキスト埋め込み (C, d)"""
    sequences = [
        assemble_text_input(bank, encoders.vocab, kind, j, domain_index)
        for j in range(bank.dims.n_classes)
    ]
    return sequences, np.array([encoders.encode_text(s) for s in sequences])


def query_embeddings(
    bank: PromptBank, encoders: FrozenEncoders
) -> Tuple[List[List[np.ndarray]], np.ndarray]:
    """Q-Promptの入力トークン列と埋め込み Z^Q (C, M, d)"""
    sequences = [
        [
            assemble_text_input(bank, encoders.vocab, PromptKind.QUERY, j, m)
            for m in range(len(bank.d_prompts))
        ]
        for j in range(bank.dims.n_classes)
    ]
    embeddings = np.array([[encoders.encode_text(s) for s in row] for row in sequences])
    return sequences, embeddings


def _cross_entropy_head(
    images: np.ndarray,
    texts: np.ndarray,
    labels: np.ndarray,
    tau: float,
    counter: Optional[ClampCounter],
) -> Tuple[float, np.ndarray]:
    """バッチ平均のクロスエントロピーと dL/dZ (C, d)"""
    b = len(labels)
    sims, img_n, txt_n, txt_norms = _cosine_matrix(images, texts)
    grad_s = np.zeros_like(sims)
    loss = 0.0
    for i, y in enumerate(labels):
        probs = softmax_temp(sims[i], tau)
        loss += cross_entropy(probs, int(y), counter)
        grad_s[i] = probs
        grad_s[i, y] -= 1.0
    grad_s /= tau * b
    return loss / b, _cosine_backward(grad_s, sims, img_n, txt_n, txt_norms)


# ---------------------------------------------------------------------------
# 予測確率
# ---------------------------------------------------------------------------


def class_probs(image: np.ndarray, texts: np.ndarray, tau: float) -> np.ndarray:
    """
    P(y=j|x) = softmax_j(sim(I, Z_j) / τ)

    Args:
        image: 画像埋め込み I
        texts: テキスト埋め込み Z_1..Z_C (C, d)
        tau: 温度
    """
    texts = np.asarray(texts, dtype=np.float64)
    if texts.shape[0] < 2:
        raise ValueError(f"クラス数は2以上である必要があります: {texts.shape[0]}")
    sims = np.array([cosine_sim(image, z) for z in texts])
    return softmax_temp(sims, tau)


# ---------------------------------------------------------------------------
# G-Prompt / D-Prompt
# ---------------------------------------------------------------------------


def loss_G_and_grad(
    bank: PromptBank,
    encoders: FrozenEncoders,
    batch: SampleSet,
    counter: Optional[ClampCounter] = None,
) -> ObjectiveResult:
    """G-Promptのクロスエントロピー損失（バッチ平均）と V^G に関する勾配"""
    if len(batch) == 0:
        raise ValueError("バッチが空です")
    sequences, texts = _text_embeddings(bank, encoders, PromptKind.GLOBAL)
    images = encoders.encode_images(batch.features)
    loss, grad_z = _cross_entropy_head(images, texts, batch.labels, encoders.tau, counter)
    grad = _backprop_prompt(encoders, sequences, grad_z, bank.dims.prompt_length)
    return ObjectiveResult(loss, grad, {"ce": loss})


def contrastive_loss_and_grad(
    bank: PromptBank, domain_index: int, positive: np.ndarray, tau_cont: float
) -> Tuple[float, np.ndarray]:
    """
    D-Promptの対照損失

    L_cont = −sim(V_m, Ṽ_m)/τ_c + log Σ_i exp(sim(V_m, V_i)/τ_c)

    分母は自己ペア i = m を含み、正例ペアを含みません。他ドメインのプロンプトは定数扱いです。
    """
    tokens = bank.d_prompts[domain_index].tokens
    anchor = tokens.reshape(-1)
    s_pos, g_pos, _ = cosine_sim_grad(anchor, positive)

    logits = np.zeros(len(bank.d_prompts))
    grads = []
    for i, dp in enumerate(bank.d_prompts):
        if i == domain_index:
            s, g_a, g_b = cosine_sim_grad(anchor, anchor)
            grads.append(g_a + g_b)
        else:
            s, g_a, _ = cosine_sim_grad(anchor, dp.tokens.reshape(-1))
            grads.append(g_a)
        logits[i] = s / tau_cont

    shift = logits.max()
    weights = np.exp(logits - shift)
    log_sum = shift + np.log(weights.sum())
    weights /= weights.sum()

    loss = -s_pos / tau_cont + log_sum
    grad = -g_pos / tau_cont
    for w, g in zip(weights, grads):
        grad = grad + w * g / tau_cont
    return float(loss), grad.reshape(tokens.shape)


def loss_D_and_grad(
    bank: PromptBank,
    encoders: FrozenEncoders,
    batch: SampleSet,
    domain_index: int,
    tau_cont: float = DEFAULT_TAU_CONT,
    contrastive: bool = True,
    positive: Optional[np.ndarray] = None,
    counter: Optional[ClampCounter] = None,
) -> ObjectiveResult:
    """
    m番目のD-Promptの損失 L_D^m = L_ce^m + L_cont^m と V^D_m に関する勾配

    Args:
        domain_index: バンク内のD-Prompt番号 m
        tau_cont: 対照損失の温度
        contrastive: False で対照項を外す（アブレーション）
        positive: 正例 Ṽ_m（省略時は手作りプロンプトから計算）
    """
    if not 0 <= domain_index < len(bank.d_prompts):
        raise ValueError(f"ドメインインデックスが範囲外です: {domain_index}")
    if len(batch) == 0:
        raise ValueError("バッチが空です")

    sequences, texts = _text_embeddings(bank, encoders, PromptKind.DOMAIN, domain_index)
    images = encoders.encode_images(batch.features)
    ce, grad_z = _cross_entropy_head(images, texts, batch.labels, encoders.tau, counter)
    grad = _backprop_prompt(encoders, sequences, grad_z, bank.dims.prompt_length)

    cont = 0.0
    if contrastive:
        if positive is None:
            positive = handcrafted_positive(
                encoders.vocab,
                bank.d_prompts[domain_index].domain_id,
                bank.dims.n_classes,
                bank.dims.prompt_length,
            )
        cont, grad_cont = contrastive_loss_and_grad(bank, domain_index, positive, tau_cont)
        grad = grad + grad_cont
    return ObjectiveResult(ce + cont, grad, {"ce": ce, "cont": cont})


# ---------------------------------------------------------------------------
# Q-Prompt
# ---------------------------------------------------------------------------


def qprompt_match(
    bank: PromptBank,
    encoders: FrozenEncoders,
    image: np.ndarray,
    embeddings: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    クラス・ドメイン同時マッチング

    P(y=j, d=m|x) = softmax over all (j, m) of sim(I, Z^Q_{j,m}) / τ

    Returns:
        (C, M) の同時確率表
    """
    if embeddings is None:
        _, embeddings = query_embeddings(bank, encoders)
    n_classes, n_domains, _ = embeddings.shape
    sims = np.array(
        [[cosine_sim(image, embeddings[j, m]) for m in range(n_domains)] for j in range(n_classes)]
    )
    return softmax_temp(sims.reshape(-1), encoders.tau).reshape(n_classes, n_domains)


def query_domain(table: np.ndarray, class_id: Optional[int] = None) -> int:
    """
    同時確率表からドメインを選択します。

    学習時（class_id 指定）はその行の最大、テスト時は全セルの最大のドメインを返します。
    同値の場合は最小のドメイン番号を選びます。
    """
    table = np.asarray(table, dtype=np.float64)
    if class_id is not None:
        return int(np.argmax(table[class_id]))
    cells = np.argwhere(table == table.max())
    return int(cells[:, 1].min())


def route_batch(
    bank: PromptBank, encoders: FrozenEncoders, batch: SampleSet
) -> List[int]:
    """バッチの各サンプルを学習モードの問い合わせでD-Promptに割り当て"""
    _, embeddings = query_embeddings(bank, encoders)
    images = encoders.encode_images(batch.features)
    return [
        query_domain(qprompt_match(bank, encoders, image, embeddings), int(y))
        for image, y in zip(images, batch.labels)
    ]


def loss_Q_and_grad(
    bank: PromptBank,
    momentum_q: np.ndarray,
    encoders: FrozenEncoders,
    batch: SampleSet,
    use_mse: bool = True,
    use_kl: bool = True,
    mse_all_classes: bool = False,
    counter: Optional[ClampCounter] = None,
) -> ObjectiveResult:
    """
    Q-Promptの自己整合損失 L_Q = L_mse + L_KL と V^Q に関する勾配

    L_mse = Σ_m mse(Z^Q_{y,m}, Ẑ^Q_{y,m})、
    L_KL = KL(softmax_m(sim(I, Z^Q_{y,m})/τ) ‖ softmax_m(sim(I, Ẑ^Q_{y,m})/τ))。
    モメンタム側 Ẑ は定数です。

    Args:
        momentum_q: モメンタム平均 V̂^Q (L, d)
        use_mse / use_kl: 各項の有無（アブレーション）
        mse_all_classes: True で L_mse を全クラスについて合計
    """
    if momentum_q.shape != bank.q_prompt.shape:
        raise ValueError(
            f"モメンタムの形状が一致しません: {momentum_q.shape} != {bank.q_prompt.shape}"
        )
    if len(batch) == 0:
        raise ValueError("バッチが空です")

    tau = encoders.tau
    sequences, current = query_embeddings(bank, encoders)
    _, momentum = query_embeddings(bank.with_prompts(q_prompt=momentum_q), encoders)
    n_classes, n_domains, embed_dim = current.shape
    b = len(batch)
    images = encoders.encode_images(batch.features)

    grad_z = np.zeros_like(current)
    mse_total = 0.0
    kl_total = 0.0
    for image, y in zip(images, batch.labels):
        y = int(y)
        if use_mse:
            classes = range(n_classes) if mse_all_classes else (y,)
            for j in classes:
                for m in range(n_domains):
                    mse_total += mse(current[j, m], momentum[j, m])
                    grad_z[j, m] += 2.0 * (current[j, m] - momentum[j, m]) / (embed_dim * b)
        if use_kl:
            sims, sim_grads = [], []
            for m in range(n_domains):
                s, _, g_z = cosine_sim_grad(image, current[y, m])
                sims.append(s)
                sim_grads.append(g_z)
            sims_hat = [cosine_sim(image, momentum[y, m]) for m in range(n_domains)]
            p = softmax_temp(np.array(sims), tau)
            q = softmax_temp(np.array(sims_hat), tau)
            kl_total += kl_div(p, q, counter)
            log_ratio = np.log(np.maximum(p, PROBABILITY_FLOOR)) - np.log(
                np.maximum(q, PROBABILITY_FLOOR)
            )
            grad_u = p * (log_ratio - float(np.dot(p, log_ratio)))
            for m in range(n_domains):
                grad_z[y, m] += grad_u[m] / tau * sim_grads[m] / b

    flat_sequences = [seq for row in sequences for seq in row]
    grad = _backprop_prompt(
        encoders, flat_sequences, grad_z.reshape(-1, embed_dim), bank.dims.prompt_length
    )
    mse_mean = mse_total / b
    kl_mean = kl_total / b
    return ObjectiveResult(mse_mean + kl_mean, grad, {"mse": mse_mean, "kl": kl_mean})


def loss_Qmatch_and_grad(
    bank: PromptBank,
    encoders: FrozenEncoders,
    batch: SampleSet,
    counter: Optional[ClampCounter] = None,
) -> ObjectiveResult:
    """
    Q-Promptのクラスマッチング損失 L_match = −log Σ_m P(y, d=m|x)（バッチ平均）

    同時確率表をドメインについて周辺化し、正解クラスのクロスエントロピーを取ります。
    """
    if len(batch) == 0:
        raise ValueError("バッチが空です")
    tau = encoders.tau
    sequences, current = query_embeddings(bank, encoders)
    n_classes, n_domains, embed_dim = current.shape
    flat_texts = current.reshape(-1, embed_dim)
    images = encoders.encode_images(batch.features)
    b = len(batch)

    sims, img_n, txt_n, txt_norms = _cosine_matrix(images, flat_texts)
    grad_s = np.zeros_like(sims)
    loss = 0.0
    for i, y in enumerate(batch.labels):
        y = int(y)
        table = softmax_temp(sims[i], tau).reshape(n_classes, n_domains)
        class_marginal = table.sum(axis=1)
        loss += cross_entropy(class_marginal, y, counter)
        grad_u = table.copy()
        row_mass = max(float(class_marginal[y]), PROBABILITY_FLOOR)
        grad_u[y] -= table[y] / row_mass
        grad_s[i] = grad_u.reshape(-1)
    grad_s /= tau * b
    grad_z = _cosine_backward(grad_s, sims, img_n, txt_n, txt_norms)
    flat_sequences = [seq for row in sequences for seq in row]
    grad = _backprop_prompt(encoders, flat_sequences, grad_z, bank.dims.prompt_length)
    return ObjectiveResult(loss / b, grad, {"match": loss / b})


# ---------------------------------------------------------------------------
# 結合目的関数
# ---------------------------------------------------------------------------


def local_objective(
    bank: PromptBank,
    encoders: FrozenEncoders,
    batch: SampleSet,
    lam: float,
    routes: Sequence[int],
    tau_cont: float = DEFAULT_TAU_CONT,
    contrastive: bool = True,
    positives: Optional[Dict[int, np.ndarray]] = None,
    counter: Optional[ClampCounter] = None,
) -> LocalObjectiveResult:
    """
    L = L_G + λ·L_D^m（サンプルごとに問い合わせたドメイン m へルーティング）

    V^D_m の勾配はドメイン m にルーティングされたサンプルの L_D 項（λ と件数比で重み付け）
    からのみ得られます。サンプルを受け取らなかったドメインは未更新扱いです。

    Args:
        lam: 重み係数 λ（0 のときD-Promptは一切更新しない）
        routes: 各サンプルのD-Prompt番号
        positives: ドメイン番号 → 正例 Ṽ_m（省略時は都度計算）
    """
    routes = np.asarray(routes, dtype=np.int64)
    if routes.shape != (len(batch),):
        raise ValueError(f"ルーティングの長さがバッチと一致しません: {routes.shape}")
    counter = counter if counter is not None else ClampCounter()

    g_result = loss_G_and_grad(bank, encoders, batch, counter)
    report = BatchLossReport(loss_g=g_result.value, selected_domains=[int(r) for r in routes])
    grads_d: Dict[int, np.ndarray] = {}

    if lam != 0.0:
        b = len(batch)
        for m in sorted(set(int(r) for r in routes)):
            members = np.flatnonzero(routes == m)
            weight = len(members) / b
            d_result = loss_D_and_grad(
                bank,
                encoders,
                batch.subset(members),
                m,
                tau_cont=tau_cont,
                contrastive=contrastive,
                positive=None if positives is None else positives.get(m),
                counter=counter,
            )
            report.loss_d += weight * d_result.value
            report.loss_d_ce[m] = d_result.terms["ce"]
            report.loss_d_cont[m] = d_result.terms["cont"]
            grads_d[m] = lam * weight * d_result.grad

    report.total = report.loss_g + lam * report.loss_d
    report.clamp_events = counter.count
    return LocalObjectiveResult(report=report, grad_g=g_result.grad, grads_d=grads_d)
