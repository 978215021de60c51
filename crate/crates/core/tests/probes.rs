use chaoscope::linalg::Matrix;
use chaoscope::model::*;
use chaoscope::numerics::PrecisionMode;
use chaoscope::probes::*;
use chaoscope::spectrum::*;
use rayon::prelude::*;
use std::sync::OnceLock;

struct Toy {
    model: ToyModel,
    point: EmbeddingPoint,
    spectrum: SpectrumResult,
}

fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let model = build_model(ModelConfig::with_seed(0)).unwrap();
        let point = model.seeded_point(1, DEFAULT_EMBEDDING_SCALE);
        let spectrum = compute_spectrum(&model, &point, None).unwrap();
        Toy { model, point, spectrum }
    })
}

fn sweep_cfg(point: &EmbeddingPoint, directions: Vec<LabeledDirection>, grid: Vec<f64>) -> SweepConfig {
    SweepConfig {
        eps_grid: grid,
        directions,
        precision: PrecisionMode::Fp32,
        base_point: point.clone(),
        thresholds: RegimeThresholds::default(),
    }
}

fn cv(values: &[f64]) -> f64 {
    let (m, s) = mean_std(values);
    s / m
}

#[test]
fn oracle_sweep_is_exact_over_the_window() {
    let o = LinearOracle::seeded(log_spaced_sigma(16, 1e-2, 1e2), 9);
    let s = oracle_spectrum(&o, o.origin());
    let dirs = (0..16).map(|k| LabeledDirection::singular(&s, k)).collect();
    let cfg = SweepConfig { precision: PrecisionMode::Fp64, ..sweep_cfg(&o.origin(), dirs, log_grid(1e-8, 1e-1, 15)) };
    for r in directional_sweep(&o, &s, &cfg).unwrap() {
        let sigma = s.sigma[r.direction_index];
        assert!((r.d_eff - sigma).abs() <= 1e-9 * sigma, "{r:?}");
    }
}

#[test]
fn toy_sweep_has_a_constant_floor() {
    let t = toy();
    let dirs: Vec<_> = (0..100).map(|i| LabeledDirection::random(64, 1000 + i)).collect();
    let cfg = sweep_cfg(&t.point, dirs, log_grid(1e-16, 1e-12, 5));
    let recs = directional_sweep(&t.model, &t.spectrum, &cfg).unwrap();
    for r in &recs {
        if r.bitwise_constant {
            assert_eq!((r.d_eff, r.regime), (0.0, Regime::Constant));
        }
    }
    let with_floor = (0..100)
        .filter(|&d| recs.iter().any(|r| r.direction_index == d && r.bitwise_constant))
        .count();
    assert!(with_floor >= 90, "{with_floor}");
}

#[test]
fn toy_sweep_tracks_sigma_at_large_eps() {
    let t = toy();
    let ks = [0, 15, 31, 63];
    let dirs = ks.iter().map(|&k| LabeledDirection::singular(&t.spectrum, k)).collect();
    let recs = directional_sweep(&t.model, &t.spectrum, &sweep_cfg(&t.point, dirs, vec![0.1])).unwrap();
    let d: Vec<f64> = recs.iter().map(|r| r.d_eff).collect();
    let sigma: Vec<f64> = ks.iter().map(|&k| t.spectrum.sigma[k]).collect();
    assert!(spearman(&d, &sigma) > 0.0, "{d:?}");
}

#[test]
fn toy_sweep_is_an_ordered_trichotomy() {
    let t = toy();
    let dirs = vec![LabeledDirection::singular(&t.spectrum, 0), LabeledDirection::random(64, 5)];
    let recs = directional_sweep(&t.model, &t.spectrum, &sweep_cfg(&t.point, dirs, default_eps_grid())).unwrap();
    for chunk in recs.chunks(120) {
        let seq: Vec<Regime> = chunk.iter().map(|r| r.regime).collect();
        assert!(is_ordered_trichotomy(&seq, 2), "{seq:?}");
    }
}

#[test]
fn layer_gains_on_oracle() {
    let o = LinearOracle::seeded(log_spaced_sigma(8, 0.5, 50.0), 1);
    let s = oracle_spectrum(&o, o.origin());
    let dirs: Vec<_> = (0..8).map(|k| LabeledDirection::singular(&s, k)).collect();
    let t = layerwise_gain(&o, &o.origin(), 1e-2, &dirs).unwrap();
    for (k, g) in t.final_layer().iter().enumerate() {
        assert!((g - s.sigma[k]).abs() <= 1e-9 * s.sigma[k]);
    }
}

#[test]
fn constant_eps_gives_zero_gain_column() {
    let t = toy();
    let dirs = vec![LabeledDirection::singular(&t.spectrum, 0), LabeledDirection::coordinate(64, 3)];
    let eps = 1e-30;
    let recs = directional_sweep(&t.model, &t.spectrum, &sweep_cfg(&t.point, dirs.clone(), vec![eps])).unwrap();
    assert!(recs.iter().all(|r| r.bitwise_constant));
    let table = layerwise_gain(&t.model, &t.point, eps, &dirs).unwrap();
    assert_eq!(table.gains.len(), 9);
    assert!(table.gains.iter().flatten().all(|&g| g == 0.0));
}

#[test]
fn directional_structure_collapses_at_small_eps() {
    let t = toy();
    let dirs = vec![
        LabeledDirection::singular(&t.spectrum, 0),
        LabeledDirection::singular(&t.spectrum, 63),
        LabeledDirection::coordinate(64, 0),
        LabeledDirection::random(64, 11),
    ];
    let small = layerwise_gain(&t.model, &t.point, 1e-9, &dirs).unwrap();
    let large = layerwise_gain(&t.model, &t.point, 0.1, &dirs).unwrap();
    let (cs, cl) = (cv(small.final_layer()), cv(large.final_layer()));
    assert!(cs < 10.0 * cl, "{cs} vs {cl}");
    // v₁ and v_d stop being told apart once rounding dominates
    let gap = |g: &[f64]| (g[0] / g[1]).ln().abs();
    assert!(gap(small.final_layer()) < gap(large.final_layer()));
}

#[test]
fn sub_ulp_schedule_has_zero_median_and_spikes() {
    let t = toy();
    let v1 = LabeledDirection::singular(&t.spectrum, 0);
    let b = search_boundary(&t.model, &t.point, &v1, &t.model.evaluate(&t.point, &[]).unwrap(), &BoundaryConfig::default());
    let start = b.s_max - 500.0 * 1e-13;
    let eps: Vec<f64> = (0..=1000).map(|i| start + i as f64 * 1e-13).collect();
    let r = instability_sweep(&t.model, &t.point, &v1, &eps).unwrap();
    assert_eq!(r.summary.median_inst, 0.0);
    assert!(r.summary.mean_inst > 1e3, "{:?}", r.summary);
    let st = micro_continuity(&t.model, &t.point, &v1, start, 1000, 1e-13).unwrap();
    assert_eq!(st.stalls + st.jumps, 1000);
    assert!(st.stall_fraction() > 0.5 && st.jumps >= 1);
}

#[test]
fn all_stalls_keep_cumulative_at_zero() {
    let o = LinearOracle::diagonal(vec![1.0, 1.0]).with_precision(PrecisionMode::Fp32);
    let p = o.point(vec![1.0, 1.0]);
    let st = micro_continuity(&o, &p, &LabeledDirection::coordinate(2, 1), 0.0, 50, 1e-12).unwrap();
    assert_eq!((st.stalls, st.jumps), (50, 0));
    assert!(st.steps.iter().all(|s| s.cumulative == 0.0 && s.step_norm == 0.0 && !s.jump));
}

#[test]
fn decision_metrics_survive_serialization() {
    let o = LinearOracle::diagonal(vec![1.0, 1.0, 1.0])
        .with_offset(vec![3e-8, 0.0, -1.0])
        .with_readout(Matrix::identity(3));
    let e1 = LabeledDirection::coordinate(3, 0);
    let e2 = LabeledDirection::coordinate(3, 1);
    let map = decision_map(&o, &o.origin(), &e1, &e2, 1e-7, 4e-9).unwrap();
    let json = serde_json::to_string(&map).unwrap();
    let back: DecisionMap = serde_json::from_str(&json).unwrap();
    let (flip, frag, cross) = grid_metrics(&back.grid);
    assert_eq!(flip.to_bits(), map.flip_frequency.to_bits());
    assert_eq!(cross.to_bits(), map.crossing_density.to_bits());
    assert_eq!(frag, map.fragmentation);
    assert_eq!(back, map);
}

#[test]
fn near_tie_matches_the_closed_form() {
    // logits y = x + b; along u = (1, -1)/√2 the gap closes at t = -b₀/√2
    let o = LinearOracle::diagonal(vec![1.0, 1.0])
        .with_offset(vec![0.8, 0.0])
        .with_readout(Matrix::identity(2));
    let u = LabeledDirection::normalized("u", &[1.0, -1.0]).unwrap();
    let cfg = NearTieConfig::default();
    let p = find_near_tie(&o, &o.origin(), &u, &cfg).unwrap();
    let t = -0.8 / 2f64.sqrt();
    assert!((p.x[0] - t / 2f64.sqrt()).abs() <= cfg.tolerance);
    assert!(o.evaluate(&p, &[]).unwrap().margin <= cfg.tolerance);
    // already tied: nothing moves
    let tied = o.point(vec![-0.8, 0.0]);
    assert_eq!(find_near_tie(&o, &tied, &u, &cfg).unwrap(), tied);
}

#[test]
fn near_tie_unreachable_along_a_flat_direction() {
    let o = LinearOracle::diagonal(vec![1.0, 1.0, 1.0])
        .with_offset(vec![0.8, 0.0, 0.0])
        .with_readout(Matrix::from_row_major(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
    let cfg = NearTieConfig { max_doublings: 12, ..NearTieConfig::default() };
    let r = find_near_tie(&o, &o.origin(), &LabeledDirection::coordinate(3, 2), &cfg);
    assert!(matches!(r, Err(ProbeError::NoNearTie(_))));
}

#[test]
fn toy_angular_spread() {
    let t = toy();
    let (a, b) = (LabeledDirection::singular(&t.spectrum, 0), LabeledDirection::singular(&t.spectrum, 1));
    let recs = angular_boundary(&t.model, &t.point, &a, &b, 360, &BoundaryConfig::default()).unwrap();
    let s: Vec<f64> = recs.iter().map(|r| r.result.s_max).collect();
    assert!(recs.iter().all(|r| r.result.status == BoundaryStatus::Found && r.result.s_next_flips));
    assert!(s.iter().all(|&x| x > 0.0));
    let spread = s.iter().copied().fold(0.0, f64::max) / s.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread >= 2.0, "{spread}");
}

#[test]
fn boundary_results_satisfy_their_invariant() {
    let t = toy();
    let base = t.model.evaluate(&t.point, &[]).unwrap();
    (0..8u64).into_par_iter().for_each(|i| {
        let d = LabeledDirection::random(64, 40 + i);
        let r = search_boundary(&t.model, &t.point, &d, &base, &BoundaryConfig::default());
        assert_eq!(r.status, BoundaryStatus::Found);
        let s = r.s_max as f32;
        let next = f32::from_bits(s.to_bits() + 1) as f64;
        assert!(t.model.evaluate(&t.point, &[(r.s_max, &d.v)]).unwrap().same_representation(&base));
        assert!(!t.model.evaluate(&t.point, &[(next, &d.v)]).unwrap().same_representation(&base));
    });
}

#[test]
fn oracle_boundary_scales_inversely_with_gain() {
    let d = 16;
    let o = LinearOracle::seeded(log_spaced_sigma(d, 1e-3, 1e3), 3).with_offset(vec![1.5; d]);
    let s = oracle_spectrum(&o, o.origin());
    let recs = spectrum_boundary(&o, &o.origin(), &s, &BoundaryConfig::default()).unwrap();
    let half_ulp = 2f64.powi(-53);
    for r in &recs {
        assert_eq!(r.result.status, BoundaryStatus::Found);
        // the first output coordinate to move past half an ULP of 1.5
        let u = &s.u[r.k];
        let peak = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let predicted = half_ulp / (r.sigma * peak);
        let ratio = r.result.s_max / predicted;
        assert!((0.5..=2.0).contains(&ratio), "k={} ratio {ratio}", r.k);
    }
    let first = recs[0].result.s_max;
    let last = recs[d - 1].result.s_max;
    let gain = s.sigma[0] / s.sigma[d - 1];
    assert!(last / first > gain / 16.0 && last / first < gain * 16.0);
}

#[test]
fn noise_kappa_degenerates_to_plain_d_eff() {
    let t = toy();
    let v = LabeledDirection::random(64, 2);
    let eps = 1e-6;
    let rec = &directional_sweep(&t.model, &t.spectrum, &sweep_cfg(&t.point, vec![v.clone()], vec![eps])).unwrap()[0];
    let k = noise_averaged_kappa(&t.model, &t.point, &v, eps, &NoiseConfig { n_samples: 1, noise_mag: 0.0, seed: 0 }).unwrap();
    assert_eq!(k.to_bits(), rec.d_eff.to_bits());
}

#[test]
fn noise_kappa_is_exact_on_the_oracle() {
    let o = LinearOracle::seeded(log_spaced_sigma(8, 0.1, 10.0), 6);
    let s = oracle_spectrum(&o, o.origin());
    let v = LabeledDirection::singular(&s, 2);
    for n in [1, 7, 50] {
        let k = noise_averaged_kappa(&o, &o.origin(), &v, 1e-3, &NoiseConfig { n_samples: n, noise_mag: 1e-9, seed: 1 }).unwrap();
        assert!((k - s.sigma[2]).abs() <= 1e-9 * s.sigma[2]);
    }
}
