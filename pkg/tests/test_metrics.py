import numpy as np
import pytest

from underwater_dal.lib.errors import ConfigError, InvalidInputError
from underwater_dal.metrics.quality import (
    LUMA_WEIGHTS,
    PSNR_CAP_DB,
    SSIM_K1,
    SSIM_K2,
    gaussian_window,
    psnr,
    ssim,
)
from underwater_dal.metrics.report import (
    REPORT_HEADER,
    aggregate_by_class,
    evaluate_identity_baseline,
    format_report,
    write_report_csv,
)


def ssim_oracle(a, b):
    """Windowed SSIM computed window by window"""
    a = a @ LUMA_WEIGHTS if a.ndim == 3 else a
    b = b @ LUMA_WEIGHTS if b.ndim == 3 else b
    w = gaussian_window()
    k = w.shape[0]
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    scores = []
    for i in range(a.shape[0] - k + 1):
        for j in range(a.shape[1] - k + 1):
            pa, pb = a[i : i + k, j : j + k], b[i : i + k, j : j + k]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * (pa - ma) ** 2)
            vb = np.sum(w * (pb - mb) ** 2)
            cov = np.sum(w * (pa - ma) * (pb - mb))
            scores.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(scores))


def test_psnr_identical_is_capped():
    x = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(x, x) == PSNR_CAP_DB == 100.0


def test_psnr_known_value():
    a = np.zeros((4, 4, 3))
    b = np.full((4, 4, 3), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, b * 2.55, max_val=255.0) == pytest.approx(10 * np.log10(255.0**2 / 0.255**2), abs=1e-9)


def test_psnr_symmetric_and_shape_checked():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(6, 6)), rng.uniform(size=(6, 6))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(InvalidInputError):
        psnr(a, b[:5])


def test_gaussian_window():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(w, w.T)


def test_ssim_identical_is_one():
    x = np.random.default_rng(2).uniform(size=(16, 16, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert ssim(x, x, per_channel=True) == pytest.approx(1.0, abs=1e-12)


def test_ssim_of_opposite_constants():
    c1 = SSIM_K1**2
    assert ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(c1 / (1 + c1), abs=1e-9)


def test_ssim_matches_direct_windowing():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.uniform(size=(20, 20, 3))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)


def test_ssim_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(14, 14, 3)), rng.uniform(size=(14, 14, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 < ssim(a, b) < 1.0


def test_ssim_rejects_small_images():
    with pytest.raises(InvalidInputError):
        ssim(np.zeros((10, 12, 3)), np.zeros((10, 12, 3)))


def test_aggregate_groups_by_class():
    rng = np.random.default_rng(5)
    clear = [rng.uniform(size=(12, 12, 3)) for _ in range(5)]
    noisy = [np.clip(c + rng.normal(0, 0.05, size=c.shape), 0, 1) for c in clear]
    outputs = [clear[0], clear[1], noisy[2], noisy[3], noisy[4]]
    report = aggregate_by_class(zip(outputs, clear, [0, 0, 3, 3, 3]))
    assert report.counts == {0: 2, 3: 3}
    assert report.ssim_mean[0] == pytest.approx(1.0, abs=1e-12)
    assert report.psnr_mean[0] == 100.0
    assert report.ssim_mean[3] < 1.0
    expected = (2 * report.ssim_mean[0] + 3 * report.ssim_mean[3]) / 5
    assert report.overall_ssim == pytest.approx(expected, abs=1e-12)
    rows = report.rows()
    assert [r[0] for r in rows] == ["1,3", "9", "all"]
    assert rows[-1][1] == 5


def test_aggregate_rejects_empty_and_bad_class():
    with pytest.raises(ConfigError):
        aggregate_by_class([])
    x = np.zeros((12, 12, 3))
    with pytest.raises(InvalidInputError):
        aggregate_by_class([(x, x, 6)])


def test_identity_baseline_and_report_files(tmp_path):
    rng = np.random.default_rng(6)
    clear = rng.uniform(size=(4, 12, 12, 3))
    report = evaluate_identity_baseline(clear, clear, [0, 1, 2, 2])
    assert report.overall_psnr == 100.0
    target = tmp_path / "report.csv"
    write_report_csv(report, str(target))
    lines = target.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert len(lines) == 1 + 3 + 1
    text = format_report(report, "identity")
    assert text.splitlines()[0] == "identity"
    assert "all" in text
