use super::*;
use nalgebra::Matrix3;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashSet;

fn latents(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
}

// smooth, anisotropic, always-positive synthetic property map
fn props_of(z: &DMatrix<f64>) -> Vec<PropertyVector<f64>> {
    (0..z.nrows())
        .map(|i| {
            let (a, b, c) = (z[(i, 0)], z[(i, 1)], z[(i, 2)]);
            let c11 = 1.0 + 0.5 * a.sin() + 0.2 * b * b;
            let c22 = 1.0 + 0.4 * b.cos() + 0.3 * c.tanh();
            let c12 = 0.3 + 0.1 * (a * c).tanh();
            let c33 = 0.2 + 0.05 * a.cos();
            PropertyVector::from_full(Matrix3::new(c11, c12, 0.0, c12, c22, 0.0, 0.0, 0.0, c33))
        })
        .collect()
}

struct Fixture {
    z: DMatrix<f64>,
    vf: Vec<f64>,
    props: Vec<PropertyVector<f64>>,
}

fn fixture(n: usize) -> Fixture {
    let z = latents(n, 3, 11);
    let props = props_of(&z);
    let vf = (0..n).map(|i| 0.2 + 0.6 * (i as f64 / n as f64)).collect();
    Fixture { z, vf, props }
}

fn small_config() -> AcquisitionConfig {
    AcquisitionConfig {
        d_v: 80,
        condition_window: Some(30),
        target_size: 120,
        n_rep: 5,
        gp_restarts: 2,
        gp_polish: 2,
        master_seed: 7,
        ..AcquisitionConfig::default()
    }
}

fn state(f: &Fixture, cfg: AcquisitionConfig) -> AcquisitionState<f64> {
    AcquisitionState::new(f.z.clone(), f.vf.clone(), Some(&f.props), cfg).unwrap()
}

fn run_full(f: &Fixture, cfg: AcquisitionConfig) -> AcquisitionState<f64> {
    let mut s = state(f, cfg);
    let mut ev = LookupEvaluator {
        properties: f.props.clone(),
    };
    s.run(&mut ev, |_| Ok(())).unwrap();
    s
}

#[test]
fn equal_seeds_give_identical_runs() {
    let f = fixture(250);
    let a = run_full(&f, small_config());
    let b = run_full(&f, small_config());
    assert_eq!(a.selected(), b.selected());
    assert_eq!(a.history(), b.history());
    assert_eq!(a.omega_history(), b.omega_history());
    let c = run_full(
        &f,
        AcquisitionConfig {
            master_seed: 8,
            ..small_config()
        },
    );
    assert_ne!(a.selected_ids(), c.selected_ids());
}

#[test]
fn target_size_fixes_iteration_count_and_selections_are_distinct() {
    let f = fixture(250);
    let cfg = AcquisitionConfig {
        target_size: 100,
        ..small_config()
    };
    let s = run_full(&f, cfg);
    assert_eq!(s.iteration(), 10);
    assert_eq!(s.history().len(), 10);
    let ids = s.selected_ids();
    assert_eq!(ids.len(), 100);
    assert_eq!(ids.iter().collect::<HashSet<_>>().len(), 100);
    for (t, row) in s.history().iter().enumerate() {
        assert_eq!(row.n_selected, 10 * (t + 1));
    }
}

#[test]
fn whole_library_when_n_equals_k() {
    let f = fixture(10);
    let cfg = AcquisitionConfig {
        d_v: 40,
        target_size: 10,
        n_rep: 3,
        ..AcquisitionConfig::default()
    };
    let mut s = state(&f, cfg);
    let mut ev = LookupEvaluator {
        properties: f.props.clone(),
    };
    assert!(s.step(&mut ev).unwrap());
    let mut ids = s.selected_ids();
    ids.sort_unstable();
    assert_eq!(ids, (0..10).collect::<Vec<_>>());
    assert!(!s.step(&mut ev).unwrap());
}

#[test]
fn residuals_start_after_second_fit() {
    let f = fixture(200);
    let mut s = state(&f, small_config());
    let mut ev = LookupEvaluator {
        properties: f.props.clone(),
    };
    assert!(s.residual_history().is_empty());
    s.step(&mut ev).unwrap();
    // 10 points >= D_z + 2 = 5: first fit, no residual yet
    assert_eq!(s.omega_history().len(), 1);
    assert!(s.residual_history().is_empty());
    assert_eq!(s.history()[0].residual, None);
    s.step(&mut ev).unwrap();
    assert_eq!(s.residual_history().len(), 1);
    assert_eq!(s.history()[1].residual, Some(s.residual_history()[0]));
}

#[test]
fn forced_thresholds_drive_stage_changes() {
    let f = fixture(300);
    let cfg = AcquisitionConfig {
        tau1: f64::INFINITY,
        tau2: 1e-300,
        i_tol: 3,
        target_size: 100,
        ..small_config()
    };
    let s = run_full(&f, cfg);
    // fits at iterations 0, 1, ...; residuals from iteration 1; the third
    // residual (iteration 3) completes the tolerance
    assert_eq!(s.transitions(), &[(3, Stage::II)]);
    assert!(s.history()[..4].iter().all(|r| r.stage == Stage::I));
    assert!(s.history()[4..].iter().all(|r| r.stage == Stage::II));
    assert_eq!(s.residual_history().len(), s.omega_history().len() - 1);
}

#[test]
fn stage_three_freezes_the_surrogate() {
    let f = fixture(300);
    let cfg = AcquisitionConfig {
        tau1: f64::INFINITY,
        tau2: f64::MAX,
        i_tol: 2,
        target_size: 120,
        ..small_config()
    };
    let s = run_full(&f, cfg);
    // the tau2 counter runs from the first residual, so Stage III follows
    // one Stage II iteration
    assert_eq!(s.transitions(), &[(2, Stage::II), (3, Stage::III)]);
    let fits = s.omega_history().len();
    assert_eq!(fits, 4);
    assert_eq!(s.gp().unwrap().omega(), s.omega_history()[3].as_slice());
    for r in &s.history()[4..] {
        assert_eq!(r.stage, Stage::III);
        assert_eq!(r.residual, None);
    }
    assert_eq!(s.selected().len(), 120);
}

fn stage_two_tags(epsilon: f64) -> Vec<(usize, StageTag)> {
    let f = fixture(300);
    let cfg = AcquisitionConfig {
        tau1: f64::INFINITY,
        tau2: 1e-300,
        i_tol: 1,
        epsilon,
        target_size: 60,
        ..small_config()
    };
    let s = run_full(&f, cfg);
    s.selected()
        .iter()
        .filter(|x| x.iteration >= 2)
        .map(|x| (x.iteration, x.tag))
        .collect()
}

#[test]
fn batch_composition_follows_epsilon() {
    let all_prop = stage_two_tags(1.0);
    assert!(!all_prop.is_empty());
    assert!(all_prop.iter().all(|(_, t)| *t == StageTag::Property));
    let all_shape = stage_two_tags(0.0);
    assert!(all_shape.iter().all(|(_, t)| *t == StageTag::Shape));
    let mixed = stage_two_tags(0.75);
    // floor(0.75 * 10) = 7 property items per batch
    let first = mixed[0].0;
    let n_prop = mixed
        .iter()
        .filter(|(it, t)| *it == first && *t == StageTag::Property)
        .count();
    assert_eq!(n_prop, 7);
}

#[test]
fn property_share_uses_floor() {
    let c = AcquisitionConfig::default();
    assert_eq!(c.property_share(10), 8);
    assert_eq!(c.property_share(3), 2);
    let c = AcquisitionConfig { epsilon: 0.55, ..c };
    assert_eq!(c.property_share(10), 5);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let f = fixture(300);
    let cfg = AcquisitionConfig {
        tau1: 0.5,
        tau2: 0.2,
        i_tol: 2,
        target_size: 200,
        ..small_config()
    };
    let full = run_full(&f, cfg.clone());
    // the small feature must have been redrawn at least once
    assert!(full.shape_epoch > 0);

    let mut ev = LookupEvaluator {
        properties: f.props.clone(),
    };
    let mut part = state(&f, cfg);
    for _ in 0..9 {
        part.step(&mut ev).unwrap();
    }
    let json = serde_json::to_string(&part.checkpoint()).unwrap();
    drop(part);
    let cp: Checkpoint<f64> = serde_json::from_str(&json).unwrap();
    let mut resumed =
        AcquisitionState::resume(f.z.clone(), f.vf.clone(), Some(&f.props), cp).unwrap();
    resumed.run(&mut ev, |_| Ok(())).unwrap();
    assert_eq!(resumed.selected(), full.selected());
    assert_eq!(resumed.history(), full.history());
    assert_eq!(resumed.transitions(), full.transitions());
}

struct Failing {
    inner: LookupEvaluator<f64>,
    calls: usize,
    fail_at: usize,
}

impl Evaluator<f64> for Failing {
    fn evaluate(
        &mut self,
        ids: &[usize],
    ) -> Result<Vec<PropertyVector<f64>>, Box<dyn std::error::Error + Send + Sync>> {
        self.calls += 1;
        if self.calls == self.fail_at {
            return Err("solver crashed".into());
        }
        self.inner.evaluate(ids)
    }
}

#[test]
fn evaluator_failure_leaves_state_untouched() {
    let f = fixture(200);
    let mut s = state(&f, small_config());
    let mut ev = Failing {
        inner: LookupEvaluator {
            properties: f.props.clone(),
        },
        calls: 0,
        fail_at: 3,
    };
    s.step(&mut ev).unwrap();
    s.step(&mut ev).unwrap();
    let before = s.checkpoint();
    let err = s.step(&mut ev).unwrap_err();
    assert!(matches!(err, AcquireError::Evaluator(_)));
    assert!(!err.is_numeric());
    assert_eq!(s.checkpoint(), before);
    // retrying continues as if nothing happened
    s.step(&mut ev).unwrap();
    let mut clean = state(&f, small_config());
    let mut ok = LookupEvaluator {
        properties: f.props.clone(),
    };
    for _ in 0..3 {
        clean.step(&mut ok).unwrap();
    }
    assert_eq!(s.selected(), clean.selected());
}

#[test]
fn bad_evaluations_are_rejected() {
    let f = fixture(100);
    let mut props = f.props.clone();
    for p in props.iter_mut() {
        p.full[(0, 0)] = f64::NAN;
    }
    let cfg = AcquisitionConfig {
        target_size: 50,
        ..small_config()
    };
    let mut s = state(&f, cfg);
    let err = s
        .step(&mut LookupEvaluator { properties: props })
        .unwrap_err();
    assert!(matches!(err, AcquireError::NonFiniteProperty(_)));
    let err = s
        .step(&mut LookupEvaluator { properties: vec![] })
        .unwrap_err();
    assert!(matches!(err, AcquireError::Evaluator(_)));
}

#[test]
fn config_validation() {
    let ok = AcquisitionConfig::default();
    assert!(ok.validate(5000).is_ok());
    let cases = [
        AcquisitionConfig { k: 0, ..ok.clone() },
        AcquisitionConfig {
            epsilon: 1.5,
            ..ok.clone()
        },
        AcquisitionConfig {
            tau2: 0.05,
            ..ok.clone()
        },
        AcquisitionConfig {
            i_tol: 0,
            ..ok.clone()
        },
        AcquisitionConfig {
            d_v: 100,
            condition_window: Some(95),
            ..ok.clone()
        },
        AcquisitionConfig {
            shape_bandwidth: Some(0.0),
            ..ok.clone()
        },
        AcquisitionConfig {
            target_size: 6000,
            ..ok.clone()
        },
    ];
    for c in cases {
        assert!(
            matches!(c.validate(5000), Err(AcquireError::Config(_))),
            "{c:?}"
        );
    }
    assert!(ok.validate(5).is_err());
}

#[test]
fn writes_history_and_manifest() {
    let f = fixture(120);
    let cfg = AcquisitionConfig {
        target_size: 30,
        quality: QualitySpec {
            kind: crate::quality::QualityKind::Anisotropy,
            ..QualitySpec::default()
        },
        ..small_config()
    };
    let s = run_full(&f, cfg);
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("history.csv");
    let m = dir.path().join("manifest.csv");
    write_history(&h, s.history()).unwrap();
    write_manifest(&m, s.selected(), &s.selected_quality()).unwrap();
    let h = std::fs::read_to_string(h).unwrap();
    let lines: Vec<&str> = h.lines().collect();
    assert_eq!(
        lines[0],
        "iter,stage,n_selected,residual,gain_shape,gain_property"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,I,10,,"));
    let m = std::fs::read_to_string(m).unwrap();
    let lines: Vec<&str> = m.lines().collect();
    assert_eq!(lines[0], "rank,id,C11,C12,C22,C33,q");
    assert_eq!(lines.len(), 31);
    let q: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&q));

    let cp = dir.path().join("state.json");
    write_checkpoint(&cp, &s).unwrap();
    let back: Checkpoint<f64> = read_checkpoint(&cp).unwrap();
    assert_eq!(back, s.checkpoint());
}

#[test]
fn single_precision_run() {
    let f = fixture(150);
    let z: DMatrix<f32> = f.z.map(|x| x as f32);
    let props: Vec<PropertyVector<f32>> = f
        .props
        .iter()
        .map(|p| PropertyVector::from_full(p.full.map(|x| x as f32)))
        .collect();
    let vf: Vec<f32> = f.vf.iter().map(|&x| x as f32).collect();
    let cfg = AcquisitionConfig {
        target_size: 40,
        ..small_config()
    };
    let mut s = AcquisitionState::new(z, vf, Some(&props), cfg).unwrap();
    s.run(&mut LookupEvaluator { properties: props }, |_| Ok(()))
        .unwrap();
    assert_eq!(s.selected().len(), 40);
}
