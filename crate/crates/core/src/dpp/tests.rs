use super::*;
use proptest::prelude::*;
use rand::Rng;
use std::collections::HashMap;

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn subdet(l: &DMatrix<f64>, s: &[usize]) -> f64 {
    if s.is_empty() {
        return 1.0;
    }
    l.select_rows(s).select_columns(s).determinant()
}

// exact k-DPP distribution by enumeration
fn kdpp_probs(l: &DMatrix<f64>, k: usize) -> Vec<(Vec<usize>, f64)> {
    let subsets = combinations(l.nrows(), k);
    let dets: Vec<f64> = subsets.iter().map(|s| subdet(l, s).max(0.0)).collect();
    let z: f64 = dets.iter().sum();
    subsets
        .into_iter()
        .zip(dets)
        .map(|(s, d)| (s, d / z))
        .collect()
}

fn kdpp_marginals(l: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let mut m = vec![0.0; l.nrows()];
    for (s, p) in kdpp_probs(l, k) {
        for i in s {
            m[i] += p;
        }
    }
    m
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_points(rng, n, n);
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05
}

fn empirical_tv(
    sampler: &KdppSampler<f64>,
    l: &DMatrix<f64>,
    k: usize,
    draws: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..draws {
        let mut s = sampler.sample(k, &mut rng).unwrap();
        s.sort_unstable();
        *counts.entry(s).or_default() += 1;
    }
    let probs = kdpp_probs(l, k);
    let mut tv = 0.0;
    for (s, p) in &probs {
        let f = *counts.get(s).unwrap_or(&0) as f64 / draws as f64;
        tv += (f - p).abs();
    }
    0.5 * tv
}

#[test]
fn gaussian_kernel_examples() {
    let sigma = 0.7;
    let pts = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, sigma * 2f64.sqrt(), 0.0, 0.0, 0.0]);
    let k = gaussian_kernel(&pts, sigma);
    for i in 0..3 {
        assert_eq!(k.l[(i, i)], 1.0);
    }
    assert!((k.l[(0, 1)] - (-1f64).exp()).abs() < 1e-15);
    assert!(subdet(&k.l, &[0, 2]).abs() <= 1e-12);
}

#[test]
fn median_distance_of_a_line() {
    let pts = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
    // distances 1,1,1,2,2,3
    assert_eq!(median_distance(&pts, 100), 2.0);
}

#[test]
fn rff_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = random_points(&mut rng, 100, 10);
    let one = rff_features(&pts, 1.0, 1, 3);
    assert!(one.matrix().iter().all(|v| v.abs() <= 2f64.sqrt()));

    let f = rff_features(&pts, 1.0, 3000, 4);
    let exact = gaussian_kernel(&pts, 1.0);
    let approx = f.implied_kernel();
    for i in 0..100 {
        assert!((approx[(i, i)] - 1.0).abs() <= 0.05, "{}", approx[(i, i)]);
    }
    // per-feature variance of 2cos(f·x+b)cos(f·y+b) is 1 + κ⁴/2 − κ² for
    // exact kernel value κ; standardized errors should be unbiased with unit
    // second moment
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    let mut pairs = 0.0;
    for i in 0..100 {
        for j in 0..i {
            let kappa: f64 = exact.l[(i, j)];
            let sd = ((1.0 + 0.5 * kappa.powi(4) - kappa * kappa) / 3000.0).sqrt();
            let e = (approx[(i, j)] - kappa) / sd;
            m1 += e;
            m2 += e * e;
            pairs += 1.0;
        }
    }
    assert!((m1 / pairs).abs() < 0.15, "bias {}", m1 / pairs);
    assert!(
        (m2 / pairs - 1.0).abs() < 0.15,
        "second moment {}",
        m2 / pairs
    );
    let again = rff_features(&pts, 1.0, 3000, 4);
    assert_eq!(f.matrix(), again.matrix());
    assert_eq!(f.rff().unwrap().frequencies.shape(), (10, 3000));
}

#[test]
fn condition_exact_on_diagonal_kernel() {
    let d = [0.5, 2.0, 1.5, 3.0, 0.1];
    let k = SimilarityKernel {
        l: DMatrix::from_diagonal(&DVector::from_column_slice(&d)),
        bandwidth: 1.0,
    };
    let (c, rest) = condition_exact(&k, &[1, 3]).unwrap();
    assert_eq!(rest, vec![0, 2, 4]);
    let want = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 1.5, 0.1]));
    assert!((c.l - want).amax() < 1e-12);
}

#[test]
fn condition_exact_composes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = SimilarityKernel {
        l: random_psd(&mut rng, 7),
        bandwidth: 1.0,
    };
    let (once, rest) = condition_exact(&k, &[1, 4]).unwrap();
    // item 5 of the original sits at position 3 of the remainder
    assert_eq!(rest[3], 5);
    let (twice, rest2) = condition_exact(&once, &[3]).unwrap();
    let (joint, rest_joint) = condition_exact(&k, &[1, 4, 5]).unwrap();
    let mapped: Vec<usize> = rest2.iter().map(|&i| rest[i]).collect();
    assert_eq!(mapped, rest_joint);
    assert!((twice.l - joint.l).amax() < 1e-8);
}

#[test]
fn condition_exact_matches_bayes_renormalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = random_psd(&mut rng, 6);
    let b = [0usize, 3];
    let (c, rest) = condition_exact(
        &SimilarityKernel {
            l: l.clone(),
            bandwidth: 1.0,
        },
        &b,
    )
    .unwrap();
    let norm_cond = (&c.l + DMatrix::identity(4, 4)).determinant();
    // P(Y = B ∪ A | B ⊆ Y) over all A ⊆ rest
    let mut total = 0.0;
    let mut rows = Vec::new();
    for mask in 0u32..16 {
        let a: Vec<usize> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
        let mut full: Vec<usize> = b.to_vec();
        full.extend(a.iter().map(|&i| rest[i]));
        full.sort_unstable();
        let w = subdet(&l, &full);
        total += w;
        rows.push((a, w));
    }
    for (a, w) in rows {
        let want = w / total;
        let got = subdet(&c.l, &a) / norm_cond;
        assert!((want - got).abs() < 1e-8, "{a:?}: {want} vs {got}");
    }
}

#[test]
fn condition_exact_rejects_bad_sets() {
    let k = SimilarityKernel {
        l: DMatrix::<f64>::identity(3, 3),
        bandwidth: 1.0,
    };
    assert_eq!(
        condition_exact(&k, &[]).unwrap_err(),
        DppError::BadConditioningSet
    );
    assert_eq!(
        condition_exact(&k, &[0, 1, 2]).unwrap_err(),
        DppError::BadConditioningSet
    );
    assert_eq!(
        condition_exact(&k, &[5]).unwrap_err(),
        DppError::OutOfRange(5)
    );
}

#[test]
fn lowrank_conditioning_on_orthogonal_rows() {
    let v = DMatrix::<f64>::identity(4, 4) * 0.8;
    let mut f = LowRankFeature::from_matrix(v.clone());
    let out = f.condition_lowrank(&[2]).unwrap();
    assert_eq!(
        out,
        Conditioned {
            rank: 1,
            dropped: 0
        }
    );
    for i in [0, 1, 3] {
        assert!((f.matrix().row(i) - v.row(i)).amax() < 1e-10);
    }
    assert!(!f.is_active(2));
    assert_eq!(f.active_indices(), vec![0, 1, 3]);
}

#[test]
fn lowrank_conditioning_orthogonalizes_remaining_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts = random_points(&mut rng, 50, 3);
    let mut f = rff_features(&pts, 1.0, 40, 5);
    let vb = f.matrix().select_rows(&[3, 17, 22]);
    f.condition_lowrank(&[3, 17, 22]).unwrap();
    let dots = f.matrix() * vb.transpose();
    assert!(dots.amax() <= 1e-8, "{}", dots.amax());
    assert_eq!(f.absorbed_rank(), 3);
    assert_eq!(
        f.condition_lowrank(&[3]).unwrap_err(),
        DppError::Inactive(3)
    );
}

#[test]
fn lowrank_conditioning_matches_exact_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = random_psd(&mut rng, 30);
    let v = l.clone().cholesky().unwrap().l();
    let mut f = LowRankFeature::from_matrix(v);
    let b = [2usize, 9, 20];
    f.condition_lowrank(&b).unwrap();
    let (exact, rest) = condition_exact(&SimilarityKernel { l, bandwidth: 1.0 }, &b).unwrap();
    assert_eq!(rest, f.active_indices());
    let implied = f.implied_kernel();
    for k in [1, 2, 3] {
        let a = kdpp_marginals(&implied, k);
        let e = kdpp_marginals(&exact.l, k);
        for (x, y) in a.iter().zip(&e) {
            assert!((x - y).abs() <= 1e-6, "k={k}: {x} vs {y}");
        }
    }
}

#[test]
fn dependent_conditioning_rows_are_dropped() {
    let mut v = DMatrix::<f64>::zeros(5, 3);
    v.set_row(0, &nalgebra::RowDVector::from_row_slice(&[1.0, 0.0, 0.0]));
    v.set_row(1, &nalgebra::RowDVector::from_row_slice(&[2.0, 0.0, 0.0]));
    v.set_row(2, &nalgebra::RowDVector::from_row_slice(&[1.0, 1.0, 0.0]));
    v.set_row(3, &nalgebra::RowDVector::from_row_slice(&[0.0, 1.0, 1.0]));
    v.set_row(4, &nalgebra::RowDVector::from_row_slice(&[0.0, 0.0, 1.0]));
    let mut f = LowRankFeature::from_matrix(v);
    let out = f.condition_lowrank(&[0, 1]).unwrap();
    assert_eq!(
        out,
        Conditioned {
            rank: 1,
            dropped: 1
        }
    );
    assert!((f.matrix()[(2, 0)]).abs() < 1e-12);
    assert!((f.matrix()[(2, 1)] - 1.0).abs() < 1e-12);
}

#[test]
fn quality_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = random_points(&mut rng, 3, 2);
    let l = gaussian_kernel(&pts, 1.0).l + DMatrix::identity(3, 3) * 0.1;
    let f = LowRankFeature::from_matrix(l.clone().cholesky().unwrap().l());
    let same = f.apply_quality(&[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(same.matrix(), f.matrix());

    let q = [1.0, 0.5, 0.8];
    let weighted = f.apply_quality(&q).unwrap();
    let k = 2;
    let base = kdpp_probs(&l, k);
    let z: f64 = base
        .iter()
        .map(|(s, p)| p * s.iter().map(|&i| q[i] * q[i]).product::<f64>())
        .sum();
    let got = kdpp_probs(&weighted.implied_kernel(), k);
    for ((s, p), (s2, p2)) in base.iter().zip(&got) {
        assert_eq!(s, s2);
        let want = p * s.iter().map(|&i| q[i] * q[i]).product::<f64>() / z;
        assert!((want - p2).abs() < 1e-10);
    }

    let zeroed = f.apply_quality(&[1.0, 0.0, 1.0]).unwrap();
    let sampler = KdppSampler::new(&zeroed);
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        assert!(!sampler.sample(2, &mut r).unwrap().contains(&1));
    }
    assert!(matches!(
        f.apply_quality(&[1.0, -0.1, 1.0]),
        Err(DppError::BadQuality { index: 1, .. })
    ));
    assert!(matches!(
        f.apply_quality(&[1.0]),
        Err(DppError::QualityLength { .. })
    ));
}

#[test]
fn elementary_symmetric_examples() {
    assert_eq!(
        elementary_symmetric(&[1.0, 1.0, 1.0], 2),
        vec![1.0, 3.0, 3.0]
    );
    assert_eq!(elementary_symmetric(&[2.0, 3.0], 2)[2], 6.0);
    let e = elementary_symmetric(&[0.3, 1.7, 2.2, -1e-11], 3);
    assert!((e[1] - 4.2).abs() < 1e-12);
    assert_eq!(elementary_symmetric(&[5.0], 3), vec![1.0, 5.0, 0.0, 0.0]);
}

#[test]
fn identity_kernel_pairs_are_uniform() {
    let f = LowRankFeature::from_matrix(DMatrix::<f64>::identity(3, 3));
    let sampler = KdppSampler::new(&f);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..30_000 {
        let mut s = sampler.sample(2, &mut rng).unwrap();
        s.sort_unstable();
        *counts.entry(s).or_default() += 1;
    }
    assert_eq!(counts.len(), 3);
    for c in counts.values() {
        assert!((*c as f64 / 30_000.0 - 1.0 / 3.0).abs() <= 0.02);
    }
}

#[test]
fn duplicate_items_never_sampled_together() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pts = random_points(&mut rng, 6, 2);
    let dup = pts.row(1).into_owned();
    pts.set_row(4, &dup);
    let f = rff_features(&pts, 1.0, 200, 10);
    let sampler = KdppSampler::new(&f);
    for _ in 0..2000 {
        let s = sampler.sample(3, &mut rng).unwrap();
        assert!(!(s.contains(&1) && s.contains(&4)), "{s:?}");
    }
}

#[test]
fn random_kernel_subset_frequencies_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let l = random_psd(&mut rng, 8);
    let f = LowRankFeature::from_matrix(l.clone().cholesky().unwrap().l());
    let tv = empirical_tv(&KdppSampler::new(&f), &l, 3, 50_000, 11);
    assert!(tv <= 0.02, "{tv}");
}

#[test]
fn dual_path_matches_exact_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts = random_points(&mut rng, 40, 2);
    let f = rff_features(&pts, 0.8, 12, 13);
    let sampler = KdppSampler::new(&f);
    let exact = kdpp_marginals(&f.implied_kernel(), 2);
    let mut counts = vec![0usize; 40];
    let draws = 40_000;
    for _ in 0..draws {
        for i in sampler.sample(2, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    for (c, e) in counts.iter().zip(&exact) {
        assert!((*c as f64 / draws as f64 - e).abs() < 0.01, "{c} vs {e}");
    }
}

#[test]
fn conditioned_items_are_never_returned() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let pts = random_points(&mut rng, 30, 3);
    let mut f = rff_features(&pts, 1.0, 64, 15);
    f.condition_lowrank(&[0, 5, 7, 11]).unwrap();
    f.deactivate(&[1]).unwrap();
    let sampler = KdppSampler::new(&f);
    for _ in 0..300 {
        let s = sampler.sample(5, &mut rng).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|i| ![0, 1, 5, 7, 11].contains(i)));
    }
}

#[test]
fn sampling_is_label_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let pts = random_points(&mut rng, 25, 3);
    let f = rff_features(&pts, 1.0, 64, 17);
    let perm: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();
    let g = f.permuted(&perm);
    for seed in 0..20 {
        let mut a = sample_kdpp(&f, 4, seed).unwrap();
        let mut b = sample_kdpp(&g, 4, seed).unwrap();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
}

#[test]
fn sampling_errors() {
    let f = LowRankFeature::from_matrix(DMatrix::<f64>::from_fn(6, 2, |i, j| (i + j) as f64 + 1.0));
    assert_eq!(
        sample_kdpp(&f, 3, 1).unwrap_err(),
        DppError::RankTooLow { rank: 2, k: 3 }
    );
    assert_eq!(
        sample_kdpp(&f, 7, 1).unwrap_err(),
        DppError::TooFewActive { active: 6, k: 7 }
    );
    assert_eq!(sample_kdpp(&f, 2, 1).unwrap().len(), 2);
}

#[test]
fn single_precision_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let pts = random_points(&mut rng, 50, 4).map(|v| v as f32);
    let mut f = rff_features(&pts, 1.0f32, 128, 19);
    f.condition_lowrank(&[1, 2]).unwrap();
    let s = sample_kdpp(&f, 6, 20).unwrap();
    assert_eq!(s.len(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn conditioning_and_quality_preserve_psd(seed in 0u64..10_000, steps in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 20, 3);
        let mut f = rff_features(&pts, 1.0, 24, seed);
        for s in 0..steps {
            let b: Vec<usize> = f.active_indices().into_iter().skip(s).step_by(5).take(2).collect();
            f.condition_lowrank(&b).unwrap();
        }
        let q: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let g = f.apply_quality(&q).unwrap();
        let l = g.implied_kernel();
        prop_assert!(crate::linalg::min_eigenvalue(&l) >= -1e-8);
        prop_assert!(crate::linalg::asymmetry(&l) <= 1e-10);
    }
}
