import numpy as np
import pytest

from krrinfer.kernels import MaternKernel
from krrinfer.krr import (
    DEFAULT_LAMBDA_MULTIPLIERS,
    CvTable,
    Dataset,
    DegenerateLeverage,
    cv_scores,
    cv_table,
    fit,
    loocv_score,
    predict,
    predict_deriv,
    select_hyperparams,
)
from krrinfer.testbed import NoiseSpec, gen_noise, get_test_function, substream


def noisy_f1(n, sigma, seed):
    rng = substream(seed)
    X = rng.random((n, 1))
    return Dataset(X, get_test_function("f1")(X[:, 0]) + gen_noise(NoiseSpec("gaussian", sigma), n, rng))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]), np.zeros(1))
    assert Dataset(np.arange(4.0), np.zeros(4)).X.shape == (4, 1)


def test_single_point_fit():
    k = MaternKernel(2.5, 1.0)
    lam, y = 0.3, 2.0
    f = fit(Dataset([[0.2]], [y]), k, lam)
    for x in (0.2, 0.5, 0.9):
        expected = float(k.matrix([[x]], [[0.2]])[0, 0]) * y / (1 + lam)
        assert predict(f, [x]) == pytest.approx(expected, rel=1e-15)


def test_near_interpolation():
    X = np.linspace(0, 1, 20).reshape(-1, 1)
    Y = np.sin(5 * X[:, 0])
    f = fit(Dataset(X, Y), MaternKernel(1.5, 1.0), 1e-10)
    assert np.max(np.abs(f.fitted() - Y)) <= 1e-4 * np.max(np.abs(Y))


def test_zero_response():
    d = Dataset(np.random.default_rng(0).random((10, 1)), np.zeros(10))
    f = fit(d, MaternKernel(3.0, 1.0), 0.01)
    assert np.all(f.predict(np.linspace(0, 1, 7).reshape(-1, 1)) == 0.0)
    assert f.sigma_hat_sq == 0.0


def test_rejects_bad_lambda_and_dimension():
    d = Dataset(np.zeros((2, 1)) + [[0.1], [0.2]], [1.0, 2.0])
    with pytest.raises(ValueError):
        fit(d, MaternKernel(3.0), 0.0)
    with pytest.raises(ValueError):
        fit(d, MaternKernel(3.0, dim=2), 0.1)


def test_predict_deriv_matches_finite_differences():
    d = noisy_f1(40, 0.5, 1)
    f = fit(d, MaternKernel(3.0, 1.0), 0.01)
    h = 1e-5
    for x in (0.2, 0.45, 0.8):
        fd = (predict(f, [x + h]) - predict(f, [x - h])) / (2 * h)
        assert predict_deriv(f, (1,), [x]) == pytest.approx(fd, rel=1e-5)
        fd2 = (predict_deriv(f, (1,), [x + h]) - predict_deriv(f, (1,), [x - h])) / (2 * h)
        assert predict_deriv(f, (2,), [x]) == pytest.approx(fd2, rel=1e-5)
    assert predict_deriv(f, (0,), [0.3]) == predict(f, [0.3])


def test_two_dimensional_gradient_and_hessian():
    rng = np.random.default_rng(4)
    X = rng.random((30, 2))
    f = fit(Dataset(X, np.cos(3 * X[:, 0]) * X[:, 1]), MaternKernel(3.0, 1.0, 2), 0.001)
    x = np.array([[0.4, 0.6]])
    h = 1e-5
    g = f.gradient(x)
    H = f.hessian(x)
    for i in range(2):
        e = np.zeros((1, 2))
        e[0, i] = h
        assert g[i] == pytest.approx((f.predict(x + e)[0] - f.predict(x - e)[0]) / (2 * h), rel=1e-5)
        col = (f.gradient(x + e) - f.gradient(x - e)) / (2 * h)
        assert np.allclose(H[:, i], col, rtol=1e-4, atol=1e-6)
    assert np.array_equal(H, H.T)


def test_linearity_in_response():
    d = noisy_f1(25, 0.5, 2)
    k = MaternKernel(2.5, 2.0)
    f1 = fit(d, k, 0.02)
    f2 = fit(d.with_response(2 * d.Y), k, 0.02)
    grid = np.linspace(0, 1, 11).reshape(-1, 1)
    assert np.array_equal(f2.predict(grid), 2 * f1.predict(grid))


def test_representer_consistency():
    d = noisy_f1(60, 0.5, 3)
    f = fit(d, MaternKernel(3.0, 1.0), 0.05)
    lhs = f.predict(d.X)
    rhs = d.Y - f.ridge * f.alpha
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * np.abs(d.Y).max())


def brute_force_loo(d, k, lam):
    errs = []
    for i in range(d.n):
        keep = np.arange(d.n) != i
        sub = Dataset(d.X[keep], d.Y[keep])
        # the held-out fit keeps the full-data ridge lambda * n
        f = fit(sub, k, lam * d.n / sub.n)
        errs.append(d.Y[i] - predict(f, d.X[i]))
    return float(np.mean(np.square(errs)))


def test_loocv_two_points_brute_force():
    d = Dataset([[0.3], [0.7]], [1.0, -0.5])
    k = MaternKernel(1.5, 1.0)
    assert loocv_score(d, k, 0.2) == pytest.approx(brute_force_loo(d, k, 0.2), rel=1e-10)


def test_loocv_random_brute_force():
    d = noisy_f1(25, 0.5, 4)
    k = MaternKernel(3.0, 2.0)
    assert loocv_score(d, k, 0.01) == pytest.approx(brute_force_loo(d, k, 0.01), rel=1e-9)


def test_loocv_zero_and_permutation():
    d = noisy_f1(30, 0.5, 5)
    k = MaternKernel(2.5, 1.0)
    assert loocv_score(d.with_response(np.zeros(30)), k, 0.1) == 0.0
    perm = np.random.default_rng(0).permutation(30)
    assert loocv_score(Dataset(d.X[perm], d.Y[perm]), k, 0.1) == pytest.approx(loocv_score(d, k, 0.1), rel=1e-10)


def test_cv_table_matches_direct_scores():
    d = noisy_f1(50, 0.5, 6)
    phis, mults = (0.5, 2.0), (0.1, 1.0, 10.0)
    table = cv_table(d, phis, mults)
    for a, phi in enumerate(phis):
        for b, c in enumerate(mults):
            direct = loocv_score(d, MaternKernel(3.0, phi), c / d.n)
            assert table.score[a, b] == pytest.approx(direct, rel=1e-7)
            f = fit(d, MaternKernel(3.0, phi), c / d.n)
            hat = f.gram @ f.factor.inverse()
            assert table.dof[a, b] == pytest.approx(np.trace(hat), rel=1e-8)
    assert np.array_equal(cv_scores(d, phis, mults), table.score)


def test_single_element_grid():
    d = noisy_f1(20, 0.5, 7)
    k, lam = select_hyperparams(d, [2.0], [0.5])
    assert (k.phi, lam) == (2.0, 0.5 / 20)


@pytest.mark.parametrize("rule", ["min", "1se"])
def test_scaling_response_keeps_selection(rule):
    d = noisy_f1(80, 0.5, 8)
    t1 = cv_table(d)
    t2 = cv_table(d.with_response(2 * d.Y))
    assert np.allclose(t2.score, 4 * t1.score, rtol=1e-10)
    assert t1.choose(rule) == t2.choose(rule)


def test_one_se_rule_prefers_fewest_degrees_of_freedom():
    table = CvTable(
        phi_grid=(1.0, 2.0),
        multipliers=(0.1, 1.0),
        n=10,
        score=np.array([[1.00, 1.05], [1.20, 1.08]]),
        se=np.array([[0.10, 0.10], [0.10, 0.10]]),
        dof=np.array([[8.0, 5.0], [9.0, 3.0]]),
    )
    assert table.choose("min") == (1.0, 0.01)
    # (2.0, 1.0) has the fewest dof but misses the 1.10 cutoff
    table = CvTable(table.phi_grid, table.multipliers, 10, np.array([[1.00, 1.05], [1.20, 1.11]]), table.se, table.dof)
    assert table.choose("1se") == (1.0, 0.1)
    with pytest.raises(ValueError):
        table.choose("aic")


def test_all_degenerate_raises():
    table = CvTable((1.0,), (1.0,), 3, np.array([[np.inf]]), np.array([[np.inf]]), np.array([[3.0]]))
    with pytest.raises(DegenerateLeverage):
        table.choose()


def test_selected_lambda_is_interior():
    interior = 0
    for seed in range(50):
        _, lam = select_hyperparams(noisy_f1(300, 0.5, 1000 + seed))
        c = lam * 300
        interior += DEFAULT_LAMBDA_MULTIPLIERS[0] < c < DEFAULT_LAMBDA_MULTIPLIERS[-1]
    assert interior >= 40


def test_sigma_hat_consistent_at_scale():
    # phi = 4 is the scale leave-one-out selects for f1; phi = 1 oversmooths its peak
    n = 2000
    ratios = []
    for seed in range(20):
        d = noisy_f1(n, 0.5, 2000 + seed)
        ratios.append(fit(d, MaternKernel(3.0, 4.0), 1.0 / n).sigma_hat_sq / 0.25)
    assert abs(np.median(ratios) - 1) <= 0.15


def test_empirical_norm_shrinks_with_lambda():
    lams = np.logspace(-5, 1, 12)
    for seed in range(10):
        d = noisy_f1(40, 0.5, 3000 + seed)
        k = MaternKernel(2.5, 1.0)
        norms = [np.sqrt(np.mean(fit(d, k, lam).fitted() ** 2)) for lam in lams]
        assert np.all(np.diff(norms) <= 1e-12)
