import math

import pytest
import torch
from pydantic import ValidationError
from torch.autograd import gradcheck

from src.models import LossReport
from src.objectives.losses import (
    cse_soft_mask,
    erase_target,
    noc_hard_mask,
    noc_loss,
    poc_loss,
    reconstruction_l1,
    soft_margin_loss,
)
from src.objectives.schedules import ScheduleSet, effective_noc_lr, schedule_value

SEEDS = range(20)


def _labels(gen: torch.Generator, batch: int, classes: int) -> torch.Tensor:
    y = (torch.rand(batch, classes, generator=gen) > 0.5).double()
    y[:, 0] = 1.0
    return y


class TestSoftMargin:
    def test_zero_logits_give_ln2(self):
        loss = soft_margin_loss(torch.zeros(4, 6, dtype=torch.float64), torch.ones(4, 6, dtype=torch.float64))
        assert abs(float(loss) - math.log(2.0)) < 1e-9

    def test_zero_logits_give_ln2_with_smoothing(self):
        y = torch.tensor([[1.0, 0.0, 1.0]], dtype=torch.float64)
        loss = soft_margin_loss(torch.zeros(1, 3, dtype=torch.float64), y, eps=0.1)
        assert abs(float(loss) - math.log(2.0)) < 1e-9

    @pytest.mark.parametrize("seed", SEEDS)
    def test_convex_in_logits(self, seed):
        gen = torch.Generator().manual_seed(seed)
        z1, z2 = (torch.randn(3, 5, dtype=torch.float64, generator=gen) * 3 for _ in range(2))
        y = _labels(gen, 3, 5)
        mid = float(soft_margin_loss((z1 + z2) / 2, y, eps=0.1))
        ends = float(soft_margin_loss(z1, y, eps=0.1)) + float(soft_margin_loss(z2, y, eps=0.1))
        assert mid <= ends / 2 + 1e-9

    def test_rejects_nan_and_bad_eps(self):
        with pytest.raises(ValueError, match="NaN"):
            soft_margin_loss(torch.tensor([[float("nan")]]), torch.ones(1, 1))
        with pytest.raises(ValueError, match="eps"):
            soft_margin_loss(torch.zeros(1, 1), torch.ones(1, 1), eps=0.5)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn(3, 5, dtype=torch.float64, generator=gen, requires_grad=True)
        y = _labels(gen, 3, 5)
        assert gradcheck(lambda z: soft_margin_loss(z, y, eps=0.1), (z,), eps=1e-6, atol=1e-8, rtol=1e-4)


@pytest.mark.parametrize("seed", SEEDS)
def test_reconstruction_l1_gradient(seed):
    gen = torch.Generator().manual_seed(seed)
    A = torch.randn(2, 3, 4, 4, dtype=torch.float64, generator=gen, requires_grad=True)
    A_re = torch.randn(2, 3, 4, 4, dtype=torch.float64, generator=gen, requires_grad=True)
    y = _labels(gen, 2, 3)
    assert gradcheck(lambda a, b: reconstruction_l1(a, b, y), (A, A_re), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_reconstruction_l1_ignores_absent_classes():
    A = torch.zeros(1, 2, 2, 2)
    A_re = torch.zeros(1, 2, 2, 2)
    A_re[0, 1] = 5.0
    assert float(reconstruction_l1(A, A_re, torch.tensor([[1.0, 0.0]]))) == 0.0
    assert float(reconstruction_l1(A, A_re)) > 0.0


class TestPocLoss:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        gen = torch.Generator().manual_seed(seed)
        sched = ScheduleSet(total_steps=10)
        y = _labels(gen, 2, 3)
        r = torch.zeros(2, dtype=torch.long)
        A, A_re, A_oc = (
            torch.randn(2, 3, 4, 4, dtype=torch.float64, generator=gen, requires_grad=True) for _ in range(3)
        )

        def total(a, b, c):
            return poc_loss(a, b, c, y, r, 5, sched)[0]

        assert gradcheck(total, (A, A_re, A_oc), eps=1e-6, atol=1e-8, rtol=1e-4)

    def test_report_matches_weighted_total(self):
        sched = ScheduleSet(total_steps=10)
        y = torch.tensor([[1.0, 1.0]])
        A = torch.randn(1, 2, 4, 4)
        total, report = poc_loss(A, A.clone(), torch.randn(1, 2, 4, 4), y, torch.tensor([1]), 10, sched)
        assert set(report.components) == {"cls", "re_cls", "re", "cse"}
        assert report.weights["re"] == 4.0
        assert report.weights["cse"] == 1.0
        assert report.components["re"] == 0.0
        assert report.total == pytest.approx(float(total), rel=1e-6)

    def test_total_grows_with_each_weight(self):
        gen = torch.Generator().manual_seed(3)
        y = torch.tensor([[1.0, 1.0, 0.0]])
        A, A_re, A_oc = (torch.randn(1, 3, 4, 4, generator=gen) for _ in range(3))
        r = torch.tensor([1])

        def total(**weights) -> float:
            return float(poc_loss(A, A_re, A_oc, y, r, 10, ScheduleSet(total_steps=10, **weights))[0])

        re_totals = [total(re_max=w) for w in (0.0, 1.0, 4.0)]
        cse_totals = [total(cse_start=w, cse_end=w) for w in (0.0, 0.5, 1.0)]
        assert re_totals == sorted(re_totals) and re_totals[0] < re_totals[-1]
        assert cse_totals == sorted(cse_totals) and cse_totals[0] < cse_totals[-1]

    def test_vanilla_has_cls_only(self):
        _, report = poc_loss(torch.randn(1, 2, 4, 4), None, None, torch.tensor([[1.0, 0.0]]), None, 0, ScheduleSet(4))
        assert list(report.components) == ["cls"]

    def test_oc_maps_need_erased_classes(self):
        with pytest.raises(ValueError, match="erased classes"):
            poc_loss(torch.randn(1, 2, 4, 4), None, torch.randn(1, 2, 4, 4), torch.ones(1, 2), None, 0, ScheduleSet(4))


@pytest.mark.parametrize("seed", SEEDS)
def test_noc_loss_gradient(seed):
    gen = torch.Generator().manual_seed(seed)
    sched = ScheduleSet(total_steps=8)
    A_noc = torch.randn(2, 4, 3, 3, dtype=torch.float64, generator=gen, requires_grad=True)
    y = _labels(gen, 2, 4)
    assert gradcheck(lambda a: noc_loss(a, y, sched, 6), (A_noc,), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_noc_loss_weight_follows_schedule():
    sched = ScheduleSet(total_steps=4)
    A, y = torch.zeros(1, 2, 2, 2), torch.ones(1, 2)
    assert float(noc_loss(A, y, sched, 0)) == 0.0
    assert float(noc_loss(A, y, sched, 4)) == pytest.approx(math.log(2.0), rel=1e-6)


class TestErasing:
    def test_erase_target(self):
        y = torch.tensor([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
        out = erase_target(y, torch.tensor([0, 2]))
        assert out.tolist() == [[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]
        assert y[0, 0] == 1.0

    def test_erase_absent_class_rejected(self):
        with pytest.raises(ValueError, match="not present"):
            erase_target(torch.tensor([1.0, 0.0]), 1)

    def test_soft_mask(self):
        x = torch.ones(1, 3, 4, 4)
        psi = torch.full((1, 2, 2), 0.25)
        assert torch.allclose(cse_soft_mask(x, psi), torch.full_like(x, 0.75))
        with pytest.raises(ValueError, match="psi_r"):
            cse_soft_mask(x, torch.full((1, 2, 2), 1.5))

    def test_hard_mask_extremes(self):
        x = torch.rand(2, 3, 8, 8)
        assert torch.equal(noc_hard_mask(x, torch.zeros(2, 4, 4), 0.2), x)
        assert torch.all(noc_hard_mask(x, torch.ones(2, 4, 4), 0.2) == 0)

    def test_hard_mask_carries_no_gradient(self):
        x = torch.rand(1, 3, 8, 8, requires_grad=True)
        psi = torch.rand(1, 4, 4, requires_grad=True)
        noc_hard_mask(x, psi, 0.2).sum().backward()
        assert psi.grad is None or float(psi.grad.abs().max()) < 1e-10
        assert x.grad is not None

    def test_fill_replaces_erased_pixels(self):
        x = torch.rand(2, 3, 8, 8)
        fill = torch.tensor([0.5, 0.4, 0.3]).reshape(3, 1, 1)
        expected = fill.expand_as(x)
        assert torch.allclose(cse_soft_mask(x, torch.ones(2, 4, 4), fill), expected)
        assert torch.allclose(noc_hard_mask(x, torch.ones(2, 4, 4), 0.2, fill), expected)
        assert torch.equal(noc_hard_mask(x, torch.zeros(2, 4, 4), 0.2, fill), x)

    @pytest.mark.parametrize("seed", range(5))
    def test_hard_mask_support_inside_soft_mask_support(self, seed):
        gen = torch.Generator().manual_seed(seed)
        x = torch.rand(2, 3, 8, 8, generator=gen) + 0.1
        psi = torch.rand(2, 4, 4, generator=gen)
        psi[psi < 0.3] = 0.0
        hard = noc_hard_mask(x, psi, 0.2) != x
        soft = cse_soft_mask(x, psi) != x
        assert hard.any()
        assert not torch.any(hard & ~soft)

    def test_hard_mask_threshold_range(self):
        with pytest.raises(ValueError, match="delta_noc"):
            noc_hard_mask(torch.rand(1, 3, 4, 4), torch.rand(1, 2, 2), 1.0)


class TestSchedules:
    def test_endpoints_exact(self):
        sched = ScheduleSet(total_steps=100)
        assert schedule_value(sched, "lambda_re", 0) == 0.0
        assert schedule_value(sched, "lambda_re", 50) == 4.0
        assert schedule_value(sched, "lambda_re", 100) == 4.0
        assert schedule_value(sched, "lambda_cse", 0) == 0.3
        assert schedule_value(sched, "lambda_cse", 100) == 1.0
        assert schedule_value(sched, "lambda_noc", 0) == 0.0
        assert schedule_value(sched, "lambda_noc", 100) == 1.0
        assert schedule_value(sched, "lr_decay", 0) == 1.0
        assert schedule_value(sched, "lr_decay", 100) == 0.0

    def test_linear_ramp(self):
        sched = ScheduleSet(total_steps=100)
        assert schedule_value(sched, "lambda_re", 25) == pytest.approx(2.0)
        assert schedule_value(sched, "lambda_noc", 40) == pytest.approx(0.4)

    def test_out_of_range_and_unknown(self):
        sched = ScheduleSet(total_steps=10)
        with pytest.raises(ValueError, match="outside"):
            schedule_value(sched, "lambda_re", 11)
        with pytest.raises(ValueError, match="Unknown schedule"):
            schedule_value(sched, "lambda_x", 0)

    def test_effective_noc_lr(self):
        sched = ScheduleSet(total_steps=10)
        assert effective_noc_lr(sched, 0.01, 0) == 0.0
        assert effective_noc_lr(sched, 0.01, 5) == pytest.approx(0.01 * 0.5 * 0.5)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError, match="k_noc"):
            ScheduleSet(total_steps=10, k_noc=0)
        with pytest.raises(ValueError, match="delta_noc"):
            ScheduleSet(total_steps=10, delta_noc=0.0)


def test_loss_report_rejects_inconsistent_total():
    with pytest.raises(ValidationError):
        LossReport(total=3.0, components={"cls": 1.0}, weights={"cls": 1.0})
    report = LossReport.from_components({"cls": 1.0, "re": 0.5}, {"re": 4.0})
    assert report.total == 3.0
    assert report.as_log_fields().endswith("total=3.00000000e+00")
