use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wingfit::ckf::{
    gaussian_expectation, train_online, CkfError, CkfState, CubatureRule, FilterConfig,
    InnovationSign,
};
use wingfit::neuralnet::{Activation, MlpSpec};

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// `E[z^k]` for a standard normal: `(k-1)!!` for even `k`, zero for odd.
fn normal_moment(k: u32) -> f64 {
    if k % 2 == 1 {
        0.0
    } else {
        (1..k).step_by(2).map(f64::from).product()
    }
}

fn exponents(n: usize, max_degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=max_degree - used).map(move |k| {
                    let mut next = e.clone();
                    next.push(k);
                    next
                })
            })
            .collect();
    }
    out
}

fn rule_moment(n: usize, e: &[u32]) -> f64 {
    let e = e.to_vec();
    gaussian_expectation(
        move |z| {
            DVector::from_element(
                1,
                z.iter().zip(&e).map(|(x, &k)| x.powi(k as i32)).product(),
            )
        },
        &DVector::zeros(n),
        &DMatrix::identity(n, n),
        &CubatureRule::new(n),
    )
    .unwrap()[0]
}

#[test]
fn rule_is_exact_to_degree_three_only() {
    for n in 1..=8 {
        let rule = CubatureRule::new(n);
        assert_eq!(rule.m(), 2 * n);
        let pts = rule.points();
        let second = &pts * pts.transpose() * rule.weight();
        assert!(max_abs(&(second - DMatrix::identity(n, n))) < 1e-14);
        for e in exponents(n, 3) {
            let exact: f64 = e.iter().map(|&k| normal_moment(k)).product();
            assert!(
                (rule_moment(n, &e) - exact).abs() < 1e-12,
                "n = {n}, exponents {e:?}"
            );
        }
        // E[z1^4] = 3, but the rule puts mass 1/n at radius sqrt(n) on that axis.
        let mut e4 = vec![0; n];
        e4[0] = 4;
        assert!((rule_moment(n, &e4) - n as f64).abs() < 1e-12);
        if n > 3 {
            assert!((rule_moment(n, &e4) - 3.0).abs() > 0.5);
        }
    }
}

#[test]
fn gaussian_expectation_reproduces_mean_and_second_moment() {
    let n = 4;
    let mu = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.1]);
    let s = DMatrix::from_fn(n, n, |i, j| {
        if j <= i {
            0.2 + 0.1 * (i + 2 * j) as f64
        } else {
            0.0
        }
    });
    let rule = CubatureRule::new(n);
    let mean = gaussian_expectation(|w| w.clone(), &mu, &s, &rule).unwrap();
    assert!((mean - &mu).amax() < 1e-14);
    let outer = gaussian_expectation(
        |w| DVector::from_column_slice((w * w.transpose()).as_slice()),
        &mu,
        &s,
        &rule,
    )
    .unwrap();
    let want = &s * s.transpose() + &mu * mu.transpose();
    assert!(max_abs(&(DMatrix::from_column_slice(n, n, outer.as_slice()) - want)) < 1e-13);
    let bad = gaussian_expectation(
        |w| DVector::from_element(1, 1.0 / (w[0] - mu[0])),
        &mu,
        &s,
        &rule,
    );
    assert!(matches!(bad, Err(CkfError::NonFinite { .. })));
}

/// One dense layer with identity output: `phi(x, w)` is linear in `w`.
fn linear_spec() -> MlpSpec {
    MlpSpec::new(vec![3, 2], vec![Activation::Identity], true).unwrap()
}

/// Measurement matrix of the linear net at input `x`, column by column.
fn measurement_matrix(spec: &MlpSpec, x: &[f64]) -> DMatrix<f64> {
    let n = spec.n_weights();
    let mut h = DMatrix::zeros(spec.output_dim(), n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        h.set_column(j, &spec.forward(&e, x).unwrap());
    }
    h
}

struct LinearProblem {
    spec: MlpSpec,
    xs: Vec<Vec<f64>>,
    ys: Vec<DVector<f64>>,
    truth: DVector<f64>,
}

fn linear_problem(steps: usize) -> LinearProblem {
    let spec = linear_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let truth = DVector::from_fn(spec.n_weights(), |_, _| rng.random_range(-1.0..1.0));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..steps {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise = DVector::from_fn(2, |_, _| 1e-3 * rng.random_range(-1.0..1.0));
        ys.push(spec.forward(truth.as_slice(), &x).unwrap() + noise);
        xs.push(x);
    }
    LinearProblem {
        spec,
        xs,
        ys,
        truth,
    }
}

#[test]
fn matches_the_analytic_kalman_filter_on_a_linear_model() {
    let lp = linear_problem(100);
    let n = lp.spec.n_weights();
    let (p0, q, r) = (0.5, 1e-4, 1e-2);
    let mut ckf = CkfState::isotropic(DVector::zeros(n), p0, q, r, 2);
    let mut w = DVector::zeros(n);
    let mut p = DMatrix::identity(n, n) * p0;
    let qm = DMatrix::identity(n, n) * q;
    let rm = DMatrix::identity(2, 2) * r;
    for (k, (x, a)) in lp.xs.iter().zip(&lp.ys).enumerate() {
        p += &qm;
        let h = measurement_matrix(&lp.spec, x);
        let s = &h * &p * h.transpose() + &rm;
        let gain = &p * h.transpose() * s.clone().try_inverse().unwrap();
        w += &gain * (a - &h * &w);
        p -= &gain * &s * gain.transpose();

        ckf.predict();
        ckf.update(&lp.spec, x, a).unwrap();
        assert!((&ckf.w - &w).amax() < 1e-8, "mean at step {k}");
        assert!(
            max_abs(&(ckf.covariance() - &p)) < 1e-8,
            "covariance at step {k}"
        );
    }
    assert!((&w - &lp.truth).amax() < 1e-2);
}

#[test]
fn flipped_innovation_sign_diverges() {
    let lp = linear_problem(100);
    let n = lp.spec.n_weights();
    let run = |sign| {
        let mut st = CkfState::isotropic(DVector::zeros(n), 0.5, 1e-4, 1e-2, 2);
        st.innovation_sign = sign;
        for (x, a) in lp.xs.iter().zip(&lp.ys) {
            st.predict();
            st.update(&lp.spec, x, a).unwrap();
        }
        (&st.w - &lp.truth).norm()
    };
    let start = lp.truth.norm();
    let good = run(InnovationSign::MeasurementMinusPrediction);
    let bad = run(InnovationSign::PredictionMinusMeasurement);
    assert!(good < 1e-2 * start, "standard sign error {good}");
    assert!(bad > 10.0 * start, "flipped sign error {bad}");
}

fn small_net() -> MlpSpec {
    MlpSpec::softplus_net(&[2, 3, 1]).unwrap()
}

fn seeded_state(spec: &MlpSpec, cfg: &FilterConfig) -> CkfState {
    CkfState::initial(spec.n_weights(), spec.output_dim(), cfg)
}

#[test]
fn huge_measurement_noise_ignores_the_measurement() {
    let spec = small_net();
    let cfg = FilterConfig {
        r: 1e12,
        seed: 3,
        ..FilterConfig::default()
    };
    let mut st = seeded_state(&spec, &cfg);
    let before = st.w.clone();
    st.predict();
    st.update(&spec, &[0.4, -0.2], &DVector::from_element(1, 5.0))
        .unwrap();
    assert!((&st.w - &before).norm() < 1e-9 * before.norm());
}

#[test]
fn perfect_prediction_keeps_the_mean_and_shrinks_the_covariance() {
    let spec = small_net();
    let mut st = seeded_state(&spec, &FilterConfig::default());
    let x = [0.7, 0.1];
    let predicted = st
        .clone()
        .update(&spec, &x, &DVector::zeros(1))
        .unwrap()
        .predicted;
    let before = st.clone();
    let report = st.update(&spec, &x, &predicted).unwrap();
    assert!(report.innovation.iter().all(|&v| v == 0.0));
    assert_eq!(st.w, before.w);
    let shrink = before.covariance() - st.covariance();
    let want = &report.gain * &report.innovation_cov * report.gain.transpose();
    assert!(max_abs(&(shrink - want)) < 1e-12);
    assert!(st.covariance().trace() < before.covariance().trace());
}

#[test]
fn predict_adds_the_process_noise() {
    let spec = small_net();
    let mut st = seeded_state(
        &spec,
        &FilterConfig {
            q: 0.0,
            ..FilterConfig::default()
        },
    );
    st.update(&spec, &[0.2, 0.3], &DVector::from_element(1, 1.0))
        .unwrap();
    let s = st.s.clone();
    st.predict();
    assert_eq!(st.s, s);

    let mut st = seeded_state(
        &spec,
        &FilterConfig {
            q: 1e-3,
            ..FilterConfig::default()
        },
    );
    st.update(&spec, &[0.2, 0.3], &DVector::from_element(1, 1.0))
        .unwrap();
    let p = st.covariance();
    let w = st.w.clone();
    let mut literal = st.clone();
    st.predict();
    literal.predict_literal();
    assert_eq!(st.w, w);
    assert!((st.covariance().diagonal() - p.diagonal())
        .iter()
        .all(|d| (d - 1e-3).abs() < 1e-14));
    assert!((&literal.w - &st.w).amax() < 1e-12);
    assert!(max_abs(&(literal.covariance() - st.covariance())) < 1e-12);
}

/// One predict/update in full-covariance arithmetic, with the sigma points
/// taken from the Cholesky factor of `P`.
fn full_p_step(
    spec: &MlpSpec,
    w: &mut DVector<f64>,
    p: &mut DMatrix<f64>,
    q: f64,
    r: f64,
    x: &[f64],
    a: &DVector<f64>,
) {
    let n = w.len();
    *p += DMatrix::identity(n, n) * q;
    let l = p.clone().cholesky().unwrap().l();
    let rule = CubatureRule::new(n);
    let m = rule.m() as f64;
    let pts: Vec<DVector<f64>> = (0..rule.m()).map(|i| rule.sigma_point(i, w, &l)).collect();
    let ys: Vec<DVector<f64>> = pts
        .iter()
        .map(|wi| spec.forward(wi.as_slice(), x).unwrap())
        .collect();
    let a_hat = ys.iter().fold(DVector::zeros(a.len()), |acc, y| acc + y) / m;
    let mut p_yy = DMatrix::identity(a.len(), a.len()) * r - &a_hat * a_hat.transpose();
    let mut p_wy = -(&*w * a_hat.transpose());
    for (wi, y) in pts.iter().zip(&ys) {
        p_yy += y * y.transpose() / m;
        p_wy += wi * y.transpose() / m;
    }
    let gain = &p_wy * p_yy.clone().try_inverse().unwrap();
    *w += &gain * (a - a_hat);
    *p -= &gain * &p_yy * gain.transpose();
}

fn regression_stream(n: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: DVector<f64> = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_element(1, (2.0 * x[0]).sin() + 0.5 * x[1] * x[1]);
            (x, y)
        })
        .collect()
}

#[test]
fn square_root_filter_matches_full_covariance_recursion() {
    let spec = small_net();
    let cfg = FilterConfig {
        p0: 0.1,
        q: 1e-6,
        r: 1e-3,
        seed: 11,
        ..FilterConfig::default()
    };
    let mut st = seeded_state(&spec, &cfg);
    let mut w = st.w.clone();
    let mut p = st.covariance();
    for (k, (x, a)) in regression_stream(50, 5).iter().enumerate() {
        st.predict();
        st.update(&spec, x.as_slice(), a).unwrap();
        full_p_step(&spec, &mut w, &mut p, cfg.q, cfg.r, x.as_slice(), a);

        let sst = st.covariance();
        assert_eq!(sst, sst.transpose());
        assert!(
            SymmetricEigen::new(sst.clone()).eigenvalues.min() > 0.0,
            "step {k}"
        );
        for i in 0..st.n() {
            assert!(st.s[(i, i)] > 0.0);
            for j in i + 1..st.n() {
                assert_eq!(st.s[(i, j)], 0.0);
            }
        }
        assert!((&st.w - &w).amax() < 1e-10, "mean at step {k}");
        assert!(max_abs(&(sst - &p)) < 1e-10, "covariance at step {k}");
    }
}

#[test]
fn reordering_sigma_points_changes_nothing() {
    // Right-multiplying S by a signed permutation leaves P unchanged but
    // permutes the sigma points (a sign flip swaps a +/- pair).
    let spec = small_net();
    let cfg = FilterConfig {
        seed: 9,
        ..FilterConfig::default()
    };
    let mut a = seeded_state(&spec, &cfg);
    let stream = regression_stream(6, 2);
    a.update(&spec, stream[0].0.as_slice(), &stream[0].1)
        .unwrap();
    let n = a.n();
    let perm = DMatrix::from_fn(n, n, |i, j| {
        if j == (i * 5 + 3) % n {
            if i % 2 == 0 {
                -1.0
            } else {
                1.0
            }
        } else {
            0.0
        }
    });
    let mut b = a.clone().with_factor(&a.s * &perm);
    assert!(max_abs(&(a.covariance() - b.covariance())) < 1e-15);
    for (x, y) in &stream[1..] {
        a.predict();
        b.predict();
        a.update(&spec, x.as_slice(), y).unwrap();
        b.update(&spec, x.as_slice(), y).unwrap();
        assert!((&a.w - &b.w).amax() < 1e-12);
        assert!(max_abs(&(a.covariance() - b.covariance())) < 1e-12);
    }
}

#[test]
fn learns_a_static_sine_from_200_samples() {
    let spec = MlpSpec::softplus_net(&[1, 6, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stream: Vec<(DVector<f64>, DVector<f64>)> = (0..200)
        .map(|_| {
            let x: f64 = rng.random_range(-3.0..3.0);
            (
                DVector::from_element(1, x),
                DVector::from_element(1, x.sin()),
            )
        })
        .collect();
    let grid: Vec<f64> = (0..=120).map(|i| -3.0 + 0.05 * i as f64).collect();
    let power = grid.iter().map(|x| x.sin().powi(2)).sum::<f64>();
    let nmse = |w: &[f64]| {
        grid.iter()
            .map(|&x| (spec.forward(w, &[x]).unwrap()[0] - x.sin()).powi(2))
            .sum::<f64>()
            / power
    };
    // A static target needs no process noise. Single runs depend on the
    // initial weights, so the claim is made for the median over ten seeds.
    let mut finals: Vec<f64> = (0..10)
        .map(|seed| {
            let cfg = FilterConfig {
                q: 0.0,
                seed,
                ..FilterConfig::default()
            };
            let out = train_online(seeded_state(&spec, &cfg), &spec, &stream, Some(&nmse)).unwrap();
            let last = out.log.last().unwrap();
            assert_eq!(last.step, 200);
            assert_eq!(out.weights.last().unwrap(), &out.state.w);
            assert!(
                last.cov_diag_max < 1e-2,
                "seed {seed}: max diag P {}",
                last.cov_diag_max
            );
            last.nmse
        })
        .collect();
    finals.sort_by(f64::total_cmp);
    let median = 0.5 * (finals[4] + finals[5]);
    assert!(median < 1e-3, "median nmse {median:.3e} over {finals:?}");
}

#[test]
fn training_is_deterministic_and_checks_dimensions() {
    let spec = small_net();
    let stream = regression_stream(10, 8);
    let cfg = FilterConfig {
        seed: 21,
        ..FilterConfig::default()
    };
    let a = train_online(seeded_state(&spec, &cfg), &spec, &stream, None).unwrap();
    let b = train_online(seeded_state(&spec, &cfg), &spec, &stream, None).unwrap();
    assert_eq!(a.state, b.state);
    assert!(a.log.iter().all(|l| l.nmse.is_nan()));

    let mut wrong = CkfState::isotropic(DVector::zeros(3), 0.1, 0.0, 1e-6, 1);
    assert!(matches!(
        wrong.update(&spec, &[0.0, 0.0], &DVector::zeros(1)),
        Err(CkfError::Dimension { .. })
    ));
    let mut st = seeded_state(&spec, &cfg);
    assert!(matches!(
        st.update(&spec, &[0.0, 0.0], &DVector::zeros(2)),
        Err(CkfError::Dimension { .. })
    ));
}
