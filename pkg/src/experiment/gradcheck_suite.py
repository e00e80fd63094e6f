"""
勾配検証スイート
G / D / Q / 結合 の4系統の解析勾配を、乱数で作った小さな構成で中心差分と比較します。
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Tuple

import numpy as np

from src.data.datagen import SampleSet
from src.errors import VerificationError
from src.logger import logger
from src.numerics.gradcheck import DEFAULT_STEP, finite_diff_check
from src.numerics.rng import Rng
from src.prompting.encoders import EncoderDims, FrozenEncoders
from src.prompting.objectives import (
    local_objective,
    loss_D_and_grad,
    loss_G_and_grad,
    loss_Q_and_grad,
    loss_Qmatch_and_grad,
)
from src.prompting.prompts import PromptBank, PromptDims, init_prompt_bank

DEFAULT_CONFIGS = 20
DEFAULT_THRESHOLD = 1e-4
FAMILIES = ("G", "D", "Q", "combined")


@dataclass(frozen=True)
class GradcheckSetup:
    """1構成分の検証対象"""

    encoders: FrozenEncoders
    bank: PromptBank
    batch: SampleSet
    momentum_q: np.ndarray
    domain_index: int
    routes: Tuple[int, ...]
    lam: float


@dataclass
class GradcheckReport:
    """系統ごとの最大相対誤差"""

    max_errors: Dict[str, float] = field(default_factory=dict)
    threshold: float = DEFAULT_THRESHOLD
    n_configs: int = 0

    @property
    def failed(self) -> List[str]:
        return [name for name, err in self.max_errors.items() if not err < self.threshold]

    @property
    def passed(self) -> bool:
        return not self.failed

    def format(self) -> str:
        lines = [f"勾配検証 ({self.n_configs} 構成, しきい値 {self.threshold:g})"]
        for name in FAMILIES:
            err = self.max_errors.get(name, float("nan"))
            status = "OK" if err < self.threshold else "NG"
            lines.append(f"  {name:<9} max_rel_err={err:.3e}  {status}")
        return "\n".join(lines)


def make_setup(seed: int) -> GradcheckSetup:
    """シードから小さな検証構成を作成（τ は 0.5〜1.5）"""
    rng = Rng(seed).child("gradcheck")
    n_classes, n_domains, batch_size = 3, 3, 4
    dims = EncoderDims(
        embed_dim=6,
        hidden_dim=8,
        feature_dim=5,
        prompt_length=2,
        tau=float(rng.child("tau").uniform(0.5, 1.5)),
    )
    encoders = FrozenEncoders.create(dims, n_classes, n_domains, seed)
    prompt_dims = PromptDims(dims.prompt_length, dims.embed_dim, n_domains, n_classes)
    bank = init_prompt_bank(prompt_dims, list(range(n_domains)), encoders.vocab, seed)
    shape = (dims.prompt_length, dims.embed_dim)
    bank = bank.with_prompts(
        g_prompt=rng.child("g").normal(shape, scale=0.5),
        d_tokens=[rng.child(f"d/{m}").normal(shape, scale=0.5) for m in range(n_domains)],
        q_prompt=bank.q_prompt + rng.child("q").normal(shape, scale=0.1),
    )
    batch = SampleSet(
        rng.child("x").normal((batch_size, dims.feature_dim)),
        rng.child("y").integers(0, n_classes, size=batch_size),
        rng.child("domain").integers(0, n_domains, size=batch_size),
    )
    routes = tuple(int(r) for r in rng.child("routes").integers(0, n_domains, size=batch_size))
    return GradcheckSetup(
        encoders=encoders,
        bank=bank,
        batch=batch,
        momentum_q=bank.q_prompt + rng.child("momentum").normal(shape, scale=0.1),
        domain_index=seed % n_domains,
        routes=routes,
        lam=float(rng.child("lambda").uniform(0.5, 1.5)),
    )


def _replace_domain(bank: PromptBank, m: int, tokens: np.ndarray) -> PromptBank:
    d_tokens = [dp.tokens for dp in bank.d_prompts]
    d_tokens[m] = tokens
    return bank.with_prompts(d_tokens=d_tokens)


def _check_g(s: GradcheckSetup, h: float, perturb: float) -> float:
    analytic = loss_G_and_grad(s.bank, s.encoders, s.batch).grad
    return finite_diff_check(
        lambda v: loss_G_and_grad(s.bank.with_prompts(g_prompt=v), s.encoders, s.batch).value,
        s.bank.g_prompt,
        analytic * (1.0 + perturb),
        h,
    )


def _check_d(s: GradcheckSetup, h: float, perturb: float) -> float:
    m = s.domain_index
    analytic = loss_D_and_grad(s.bank, s.encoders, s.batch, m).grad
    return finite_diff_check(
        lambda v: loss_D_and_grad(_replace_domain(s.bank, m, v), s.encoders, s.batch, m).value,
        s.bank.d_prompts[m].tokens,
        analytic * (1.0 + perturb),
        h,
    )


def _q_objective(s: GradcheckSetup, bank: PromptBank) -> Tuple[float, np.ndarray]:
    q = loss_Q_and_grad(bank, s.momentum_q, s.encoders, s.batch)
    match = loss_Qmatch_and_grad(bank, s.encoders, s.batch)
    return q.value + match.value, q.grad + match.grad


def _check_q(s: GradcheckSetup, h: float, perturb: float) -> float:
    _, analytic = _q_objective(s, s.bank)
    return finite_diff_check(
        lambda v: _q_objective(s, s.bank.with_prompts(q_prompt=v))[0],
        s.bank.q_prompt,
        analytic * (1.0 + perturb),
        h,
    )


def combined_total(s: GradcheckSetup, bank: PromptBank) -> float:
    return local_objective(bank, s.encoders, s.batch, s.lam, s.routes).report.total


def routed_domain_share(s: GradcheckSetup, bank: PromptBank, m: int) -> float:
    """
    V^D_m から見た結合目的関数 L_G + λ·w_m·L_D^m

    他ドメインの L_D 項は含めません（対照損失の分母で V^D_m に依存しますが、
    ローカル更新では定数扱いです）。
    """
    report = local_objective(bank, s.encoders, s.batch, s.lam, s.routes).report
    weight = s.routes.count(m) / len(s.routes)
    return report.loss_g + s.lam * weight * (report.loss_d_ce[m] + report.loss_d_cont[m])


def _check_combined(s: GradcheckSetup, h: float, perturb: float) -> float:
    result = local_objective(s.bank, s.encoders, s.batch, s.lam, s.routes)
    worst = finite_diff_check(
        lambda v: combined_total(s, s.bank.with_prompts(g_prompt=v)),
        s.bank.g_prompt,
        result.grad_g * (1.0 + perturb),
        h,
    )
    for m, grad in result.grads_d.items():
        worst = max(
            worst,
            finite_diff_check(
                lambda v, m=m: routed_domain_share(s, _replace_domain(s.bank, m, v), m),
                s.bank.d_prompts[m].tokens,
                grad * (1.0 + perturb),
                h,
            ),
        )
    return worst


CHECKS: Dict[str, Callable[[GradcheckSetup, float, float], float]] = {
    "G": _check_g,
    "D": _check_d,
    "Q": _check_q,
    "combined": _check_combined,
}


def run_gradcheck(
    n_configs: int = DEFAULT_CONFIGS,
    h: float = DEFAULT_STEP,
    threshold: float = DEFAULT_THRESHOLD,
    perturb: float = 0.0,
) -> GradcheckReport:
    """
    全系統の勾配検証を実行します。

    Args:
        n_configs: 乱数構成の数（シード 0..n-1）
        h: 差分ステップ
        threshold: 合格とする最大相対誤差
        perturb: 解析勾配に掛ける相対摂動（検証が失敗することの確認用）

    Returns:
        検証結果
    """
    report = GradcheckReport(
        max_errors={name: 0.0 for name in FAMILIES}, threshold=threshold, n_configs=n_configs
    )
    for seed in range(n_configs):
        setup = make_setup(seed)
        for name in FAMILIES:
            err = CHECKS[name](setup, h, perturb)
            report.max_errors[name] = max(report.max_errors[name], err)
            logger.debug(f"gradcheck seed={seed} {name}: {err:.3e}")
    logger.info(report.format())
    return report


def verify(report: GradcheckReport) -> None:
    """
    Raises:
        VerificationError: しきい値を超えた系統がある場合
    """
    if not report.passed:
        raise VerificationError(f"勾配検証に失敗しました: {report.failed}")
