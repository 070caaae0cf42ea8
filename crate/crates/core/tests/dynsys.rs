use eal_core::dynsys::{
    integrate_lorenz, integrate_vdp, lorenz_corpus, rk4_integrate, Dataset, LorenzCorpusConfig, LorenzParams, Split,
    Standardizer, TargetKind, Trajectory, VdpCase, WindowedDataset,
};

fn oscillator_error(dt: f64) -> f64 {
    let steps = (2.0 / dt).round() as usize;
    let traj = rk4_integrate(
        |_, s, out: &mut [f64]| {
            out[0] = s[1];
            out[1] = -s[0];
        },
        &[1.0, 0.0],
        0.0,
        dt,
        steps,
    )
    .unwrap();
    let end = traj.row(steps);
    let t = steps as f64 * dt;
    ((end[0] - t.cos()).powi(2) + (end[1] + t.sin()).powi(2)).sqrt()
}

#[test]
fn rk4_convergence_order() {
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = dts.iter().map(|&dt| oscillator_error(dt)).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((3.7..=4.3).contains(&order), "measured order {order} from {errs:?}");
    }
}

#[test]
fn rk4_handles_time_dependent_fields() {
    // x' = cos t, x(0) = 0 → x = sin t.
    let traj = rk4_integrate(|t, _, out: &mut [f64]| out[0] = t.cos(), &[0.0], 0.0, 0.01, 300).unwrap();
    assert!((traj.row(300)[0] - 3.0f64.sin()).abs() < 1e-10);
}

#[test]
fn lorenz_stays_on_the_attractor() {
    let traj = integrate_lorenz(&LorenzParams::default(), [1.0, 1.0, 1.0], 0.01, 100_000).unwrap();
    assert_eq!(traj.len(), 100_001);
    for r in traj.states.chunks(3).skip(1000) {
        assert!(r[0].abs() < 30.0 && r[1].abs() < 40.0, "{r:?}");
        assert!(r[2] > 0.0 && r[2] < 60.0, "{r:?}");
    }
    assert_eq!(traj.columns, ["x", "y", "z"]);
}

#[test]
fn vdp_cases_remain_finite() {
    for case in VdpCase::ALL {
        let traj = integrate_vdp(&case.params(), [1.0, 0.0], 0.01, 10_000).unwrap();
        let peak = traj.states.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(peak.is_finite() && peak < 100.0, "{case:?} peak {peak}");
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let traj = integrate_lorenz(&LorenzParams::default(), [0.3, -1.7, 20.0], 0.01, 50).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let back = Trajectory::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.columns, traj.columns);
    assert!(back
        .states
        .iter()
        .zip(&traj.states)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(back
        .times
        .iter()
        .zip(&traj.times)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn csv_import_rejects_bad_input() {
    for text in [
        "",
        "x,y\n1,2\n",
        "t,x\n0,1\n1\n",
        "t,x\n0,1\n1,abc\n",
        "t,x\n0,1\n1,2\n3,3\n",
        "t,x\n1,1\n0,2\n",
        "t,x\n0,NaN\n",
    ] {
        assert!(Trajectory::read_csv(text.as_bytes()).is_err(), "{text:?}");
    }
    let ok = Trajectory::read_csv("t, v\n0,1\n0.5,2\n1,3\n".as_bytes()).unwrap();
    assert_eq!(ok.dt(), Some(0.5));
    assert_eq!(ok.column(0), vec![1.0, 2.0, 3.0]);
}

#[test]
fn corpus_is_seeded_and_split() {
    let cfg = LorenzCorpusConfig {
        steps: 600,
        test_steps: 700,
        transient: 100,
        ..LorenzCorpusConfig::desk()
    };
    let a = lorenz_corpus(&cfg, 3).unwrap();
    let b = lorenz_corpus(&cfg, 3).unwrap();
    let c = lorenz_corpus(&cfg, 4).unwrap();
    assert_eq!(a.initial_states, b.initial_states);
    assert_ne!(a.initial_states, c.initial_states);
    assert_eq!(a.initial_states.len(), 10);
    assert!(a.initial_states.iter().flatten().all(|v| (0.0..5.0).contains(v)));
    assert_eq!(a.train.len(), 8 * (600 - 64));
    assert_eq!(a.val.len(), 2 * (600 - 64));
    assert_eq!(a.test.len(), 700);
    assert_eq!(a.train.sample(17).0, b.train.sample(17).0);
    // Training windows are standardized to zero mean, unit variance.
    let mut sums = [0.0; 3];
    let mut count = 0.0;
    for i in (0..a.train.len()).step_by(64) {
        for row in a.train.input(i).data().chunks(3) {
            for k in 0..3 {
                sums[k] += row[k];
            }
            count += 1.0;
        }
    }
    assert!(sums.iter().all(|s| (s / count).abs() < 0.1), "{sums:?}");
}

#[test]
fn test_series_starts_after_transient() {
    let cfg = LorenzCorpusConfig {
        steps: 300,
        test_steps: 400,
        transient: 50,
        ..LorenzCorpusConfig::desk()
    };
    let corpus = lorenz_corpus(&cfg, 0).unwrap();
    let direct = integrate_lorenz(&cfg.params, cfg.test_state, cfg.dt, 449).unwrap();
    assert_eq!(corpus.test.row(0), direct.row(50));
    assert_eq!(corpus.test.row(399), direct.row(449));
}

#[test]
fn standardizer_round_trip() {
    let traj = integrate_lorenz(&LorenzParams::default(), [1.0, 2.0, 3.0], 0.01, 500).unwrap();
    let s = Standardizer::fit(std::slice::from_ref(&traj)).unwrap();
    let back = s.invert(&s.apply(&traj));
    for (a, b) in back.states.iter().zip(&traj.states) {
        assert!((a - b).abs() < 1e-12);
    }
    let id = Standardizer::identity(3);
    assert_eq!(id.apply(&traj).states, traj.states);
}

#[test]
fn shifted_window_targets() {
    let ramp = Trajectory::new(
        (0..8).map(f64::from).collect(),
        (0..16).map(f64::from).collect(),
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let ds = WindowedDataset::with_target(&[ramp.clone(), ramp], 3, Split::Train, TargetKind::ShiftedWindow).unwrap();
    assert_eq!(ds.len(), 10);
    let (x, y) = ds.sample(2);
    assert_eq!(x.data(), &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    assert_eq!(y.data(), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    assert_eq!(ds.origins().nth(5), Some((1, 0)));
}

#[test]
fn invalid_corpus_configs() {
    let base = LorenzCorpusConfig::desk();
    for bad in [
        LorenzCorpusConfig {
            train_series: 10,
            ..base.clone()
        },
        LorenzCorpusConfig {
            steps: 64,
            ..base.clone()
        },
        LorenzCorpusConfig {
            dt: 0.0,
            ..base.clone()
        },
        LorenzCorpusConfig {
            initial_low: 5.0,
            ..base.clone()
        },
    ] {
        assert!(bad.validate().is_err());
    }
}
