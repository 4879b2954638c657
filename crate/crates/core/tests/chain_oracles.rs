use fanonet_core::chain::{
    marginal_covariance, precision_matrix, sample_dataset, structured_covariance_diagonal, ChainParams, GaussianDist,
    Label, MarginalLaw,
};
use fanonet_core::hypothesis::{hypothesis_at, ClassParams, GeneralNetwork};
use fanonet_core::info::monte_carlo_mean;
use nalgebra::{DMatrix, DVector};

fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

#[test]
fn depth_one_precision_blocks() {
    let net = GeneralNetwork::standard_normal(&[3, 2], 1.0, 5).unwrap();
    let s2 = 0.6;
    let params = ChainParams::new(net.clone(), s2).unwrap();
    let prec = precision_matrix(&params);
    let w = &net.layers()[0];
    let expected_00 = (DMatrix::identity(3, 3) + w.transpose() * w) / s2;
    assert!((prec.block(0, 0) - expected_00).amax() < 1e-14);
    assert!((prec.block(0, 1) + w.transpose() / s2).amax() < 1e-14);
    assert!((prec.block(1, 0) + w / s2).amax() < 1e-14);
    assert!((prec.block(1, 1) - DMatrix::identity(2, 2) / s2).amax() < 1e-14);
}

#[test]
fn depth_two_precision_is_block_tridiagonal() {
    let net = GeneralNetwork::standard_normal(&[2, 3, 4], 1.0, 6).unwrap();
    let params = ChainParams::new(net.clone(), 1.0).unwrap();
    let prec = precision_matrix(&params);
    let (w1, w2) = (&net.layers()[0], &net.layers()[1]);
    assert!((prec.block(1, 1) - (DMatrix::identity(3, 3) + w2.transpose() * w2)).amax() < 1e-14);
    assert!((prec.block(2, 1) + w2).amax() < 1e-14);
    assert!((prec.block(1, 0) + w1).amax() < 1e-14);
    assert_eq!(prec.block(0, 2).amax(), 0.0);
    assert_eq!(prec.block(2, 0).amax(), 0.0);
}

#[test]
fn depth_two_covariance_matches_nested_formula() {
    for seed in 0..10 {
        let net = GeneralNetwork::standard_normal(&[3, 4, 3], 0.9, seed).unwrap();
        let s2 = 1.3;
        let (w1, w2) = (&net.layers()[0], &net.layers()[1]);
        let i3 = DMatrix::<f64>::identity(3, 3);
        let i4 = DMatrix::<f64>::identity(4, 4);
        let m1 = w1 * inv(&(&i3 + w1.transpose() * w1)) * w1.transpose();
        let inner = &i4 + w2.transpose() * w2 - m1;
        let expected = inv(&(&i3 - w2 * inv(&inner) * w2.transpose())) * s2;
        let got = marginal_covariance(&ChainParams::new(net, s2).unwrap()).unwrap();
        assert!((got - &expected).amax() < 1e-10 * expected.amax());
    }
}

#[test]
fn depth_one_covariance_matches_direct_formula() {
    let net = GeneralNetwork::standard_normal(&[4, 3], 1.1, 2).unwrap();
    let w = &net.layers()[0];
    let expected = DMatrix::identity(3, 3) * 0.5 + w * w.transpose() * 0.5;
    let got = marginal_covariance(&ChainParams::new(net, 0.5).unwrap()).unwrap();
    assert!((got - expected).amax() < 1e-12);
}

#[test]
fn lower_block_variance_grows_toward_geometric_limit() {
    let class = |d| ClassParams::new(5, d, 2).unwrap();
    let c: f64 = 0.25;
    let limit = 1.0 / (1.0 - c * c);
    let mut previous = 0.0;
    for d in 1..=50 {
        let v = structured_covariance_diagonal(class(d), c, 1.0)[4];
        assert!(v <= limit);
        if d <= 10 {
            assert!(v > previous);
        } else {
            assert!(v >= previous);
        }
        previous = v;
    }
    assert!((limit - previous).abs() < 1e-12);
}

#[test]
fn empirical_covariance_within_five_percent() {
    let h = hypothesis_at(ClassParams::new(5, 2, 3).unwrap(), 201).unwrap();
    let params = ChainParams::from_hypothesis(&h, 1.0).unwrap();
    let n = 200_000;
    let data = sample_dataset(&params, n, 12).unwrap();
    let w = h.effective_vector();
    let mut pos_mean = DVector::zeros(5);
    let mut pos = 0usize;
    let mut cov = DMatrix::zeros(5, 5);
    for s in &data.pairs {
        let x = DVector::from_column_slice(&s.x);
        if s.y == Label::Pos {
            pos_mean += &x;
            pos += 1;
        }
        let e = &x - &w * s.y.sign();
        cov += &e * e.transpose();
    }
    pos_mean /= pos as f64;
    cov /= n as f64;
    let exact = marginal_covariance(&params).unwrap();
    let total_sd = exact.diagonal().map(f64::sqrt);
    for i in 0..5 {
        assert!((pos_mean[i] - w[i]).abs() < 4.0 * total_sd[i] / (pos as f64).sqrt());
    }
    assert!((&cov - &exact).norm() / exact.norm() < 0.05);
}

#[test]
fn joint_density_integrates_to_one_half_per_label() {
    // Importance sampling from a wider Gaussian centred at the mode.
    let h = hypothesis_at(ClassParams::new(4, 2, 2).unwrap(), 50).unwrap();
    let law = MarginalLaw::for_hypothesis(&h, 1.0).unwrap();
    for y in [Label::Pos, Label::Neg] {
        let mean = law.conditional(y).mean().clone();
        let proposal = GaussianDist::new(mean, law.covariance() * 2.0).unwrap();
        let est = monte_carlo_mean(200_000, 4, u64::from(y == Label::Pos), |rng| {
            let x = proposal.sample(rng);
            (law.log_density(x.as_slice(), y) - proposal.log_density(x.as_slice())).exp()
        })
        .unwrap();
        assert!((est.estimate - 0.5).abs() < 0.01, "{est:?}");
    }
}

#[test]
fn conditional_mean_is_the_mode() {
    let h = hypothesis_at(ClassParams::new(4, 1, 2).unwrap(), 9).unwrap();
    let law = MarginalLaw::for_hypothesis(&h, 1.0).unwrap();
    let mode = law.conditional(Label::Neg).mean().clone();
    let at_mode = law.log_density(mode.as_slice(), Label::Neg);
    for k in 0..4 {
        let mut x = mode.clone();
        x[k] += 1e-3;
        assert!(law.log_density(x.as_slice(), Label::Neg) < at_mode);
    }
    let plus = fanonet_core::chain::conditional_mean(&ChainParams::from_hypothesis(&h, 1.0).unwrap(), Label::Pos);
    assert!((&plus + &mode).amax() == 0.0);
    assert!((h.effective_vector() - &plus).amax() == 0.0);
}
