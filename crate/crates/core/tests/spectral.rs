use std::f64::consts::PI;

use eal_core::attention::{AttentionConfig, AttentionLayer, Variant};
use eal_core::dynsys::sine_dataset;
use eal_core::models::{AttentionModel, SequenceModel};
use eal_core::seed::rng_for;
use eal_core::spectral::{
    component_wave, dft, idft, module_input_size, multi_attention_reconstruct, reconstruction_energy, select_top_k,
    svd, svd_analyze, truncation_energy, MatrixFamily, ModuleTraining,
};
use eal_core::tensor::{OptimizerKind, Tensor};
use rand::Rng;

fn noise(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, "signal");
    (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let m = x.len();
    (0..m)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
                let a = -2.0 * PI * (k * t) as f64 / m as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

#[test]
fn fft_matches_naive_oracle() {
    for m in [1, 2, 37, 64, 100] {
        let x = noise(m, m as u64);
        let dec = dft(&x).unwrap();
        for (c, (re, im)) in dec.coefficients.iter().zip(naive_dft(&x)) {
            assert!((c.re - re).abs() < 1e-10 && (c.im - im).abs() < 1e-10, "m={m}");
        }
    }
}

#[test]
fn pure_tone_lands_in_two_bins() {
    let x: Vec<f64> = (0..64)
        .map(|t| 3.0 * (2.0 * PI * 5.0 * t as f64 / 64.0 + 0.4).cos())
        .collect();
    let dec = dft(&x).unwrap();
    let mut top = dec.top_k[..2].to_vec();
    top.sort();
    assert_eq!(top, vec![5, 59]);
    assert!((dec.amplitudes[5] - 96.0).abs() < 1e-10);
    assert!((dec.phases[5] - 0.4).abs() < 1e-12);
    assert!((dec.frequencies[59] + 5.0 / 64.0).abs() < 1e-15);
    assert_eq!(dec.units()[0], 5);
    assert!((dec.period(59) - 12.8).abs() < 1e-12);
    assert_eq!(module_input_size(&dec, 5), 13);
    let wave = component_wave(&dec, 59).unwrap();
    assert!(wave.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!((truncation_energy(&dec, 1) - 100.0).abs() < 1e-9);
}

#[test]
fn parseval_holds() {
    for m in [37, 128, 1000] {
        let x = noise(m, 3);
        let dec = dft(&x).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = dec.amplitudes.iter().map(|a| a * a).sum::<f64>() / m as f64;
        assert!((time - freq).abs() < 1e-9 * time);
        let units: f64 = dec.units().iter().map(|&b| dec.unit_energy(b)).sum();
        assert!((time - units).abs() < 1e-9 * time);
    }
}

#[test]
fn inverse_round_trip() {
    for m in [1, 2, 7, 64, 513, 4096] {
        let x = noise(m, 9);
        let dec = dft(&x).unwrap();
        let all: Vec<usize> = (0..m).collect();
        let back = idft(&dec, &all).unwrap();
        let err = back.iter().zip(&x).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        assert!(err < 1e-12, "m={m} err={err}");
    }
}

#[test]
fn idft_of_one_unit_is_its_component() {
    let x = noise(50, 4);
    let dec = dft(&x).unwrap();
    for &b in &dec.units()[..5] {
        let a = idft(&dec, &[b]).unwrap();
        let c = component_wave(&dec, b).unwrap();
        assert!(a.iter().zip(&c).all(|(p, q)| (p - q).abs() < 1e-12));
    }
    assert!(idft(&dec, &[50]).is_err());
}

#[test]
fn truncation_energy_rises_with_k() {
    let x = noise(200, 5);
    let dec = dft(&x).unwrap();
    let units = dec.units().len();
    let mut last = f64::NEG_INFINITY;
    for k in 0..=units {
        let e = truncation_energy(&dec, k);
        assert!(e >= last - 1e-12);
        last = e;
    }
    assert!((last - 100.0).abs() < 1e-9);
    assert_eq!(truncation_energy(&dec, 0), 0.0);
    let k = select_top_k(&dec, 90.0).unwrap();
    assert!(truncation_energy(&dec, k) >= 90.0);
    assert!(truncation_energy(&dec, k - 1) < 90.0);
    assert!(select_top_k(&dec, 0.0).is_err());
    assert!(select_top_k(&dec, 101.0).is_err());
}

#[test]
fn energy_metric_reference_points() {
    let s = [1.0, -2.0, 3.0];
    assert_eq!(reconstruction_energy(&s, &s).unwrap(), 100.0);
    assert_eq!(reconstruction_energy(&s, &[0.0; 3]).unwrap(), 0.0);
    let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
    assert_eq!(reconstruction_energy(&s, &doubled).unwrap(), 0.0);
    let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
    assert_eq!(reconstruction_energy(&s, &flipped).unwrap(), -100.0);
}

#[test]
fn svd_reconstructs() {
    for (m, n) in [(3, 3), (5, 3), (3, 6), (10, 10)] {
        let a = Tensor::uniform(&[m, n], 1.0, &mut rng_for(m as u64 * 31 + n as u64, "svd"));
        let d = svd(&a).unwrap();
        assert!(d.reconstruct().max_abs_diff(&a) < 1e-10);
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        // Singular vectors are orthonormal.
        let r = d.s.len();
        for p in 0..r {
            for q in 0..r {
                let dot: f64 = d.left(p).iter().zip(d.left(q)).map(|(a, b)| a * b).sum();
                assert!((dot - if p == q { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn dyadic_product_has_rank_one() {
    let y = [0.3, -1.2, 0.7, 2.0];
    let z = [1.0, 0.5, -0.25, 0.0];
    let a = Tensor::from_fn(&[4, 4], |k| y[k / 4] * z[k % 4]);
    let d = svd(&a).unwrap();
    assert!(d.s[1] < 1e-10);
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((d.s[0] - ny * nz).abs() < 1e-12);
}

#[test]
fn rank_one_with_near_zero_columns() {
    let col = [0.8414709848078963, 0.5403023058681402, -0.8414709848078962];
    let a = Tensor::from_fn(&[3, 3], |k| if k % 3 == 1 { col[k / 3] } else { 4e-16 * col[k / 3] });
    let d = svd(&a).unwrap();
    assert!(d.reconstruct().max_abs_diff(&a) < 1e-12);
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((d.s[0] - norm).abs() < 1e-12);
    assert!((d.right(0)[1].abs() - 1.0).abs() < 1e-12);
}

#[test]
fn analysis_sections_on_the_sine_task() {
    let cfg = AttentionConfig::new(Variant::SelfAttention, 3, 3, 1);
    let mut model = AttentionModel::new("self", &cfg, &mut rng_for(1, "init")).unwrap();
    let AttentionLayer::SelfAttention(layer) = model.layer.clone() else {
        panic!()
    };
    let data = sine_dataset();
    let report = svd_analyze(&data.inputs, &layer, model.params(), (1, 0)).unwrap();
    assert_eq!(report.families.len(), 3);
    for (_, samples) in &report.families {
        assert_eq!(samples.len(), data.inputs.len());
        for s in samples {
            assert!(
                s.error.is_none() && s.reconstruction_error < 1e-10,
                "sample {}: {}",
                s.sample,
                s.reconstruction_error
            );
        }
    }
    for s in report.family(MatrixFamily::SelfCombination) {
        assert!(s.singular_values[1] < 1e-10);
    }
    // Zero queries make every score row uniform, a rank-one matrix.
    *model.params_mut().get_mut(layer.w_q) = Tensor::zeros(&[3, 3]);
    let flat = svd_analyze(&data.inputs, &layer, model.params(), (1, 0)).unwrap();
    for s in flat.family(MatrixFamily::Score) {
        assert!((s.singular_values[0] - 1.0).abs() < 1e-12);
        assert!(s.singular_values[1] < 1e-10);
        assert!(s.diagonal.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
    assert!(svd_analyze(&data.inputs, &layer, model.params(), (3, 0)).is_err());
}

#[test]
fn easy_modules_reconstruct_a_two_tone_signal() {
    let m = 64;
    let x: Vec<f64> = (0..m)
        .map(|t| {
            let t = t as f64;
            (2.0 * PI * 4.0 * t / 64.0).sin() + 0.5 * (2.0 * PI * 8.0 * t / 64.0 + 1.0).cos()
        })
        .collect();
    let training = ModuleTraining {
        epochs: 150,
        ..ModuleTraining::default()
    };
    let r = multi_attention_reconstruct(&x, 2, Variant::EasyDense, &training, 3).unwrap();
    assert_eq!(r.units.len(), 2);
    assert_eq!(r.units[0].bin, 4);
    assert_eq!(r.units[0].input_size, 16);
    assert_eq!(r.units[1].input_size, 8);
    assert!(r.mean_epsilon < 0.02, "{}", r.mean_epsilon);
    assert!((r.truncation_energy - 100.0).abs() < 1e-9);
    assert!(r.energy > 97.0, "{}", r.energy);
    let again = multi_attention_reconstruct(&x, 2, Variant::EasyDense, &training, 3).unwrap();
    assert_eq!(r.reconstruction, again.reconstruction);
}

#[test]
fn diverging_modules_are_reported_not_fatal() {
    let x: Vec<f64> = (0..32).map(|t| (2.0 * PI * 2.0 * t as f64 / 32.0).sin()).collect();
    let training = ModuleTraining {
        optimizer: OptimizerKind::sgd(1e12, 0.9),
        epochs: 5,
        batch_size: 4,
    };
    let r = multi_attention_reconstruct(&x, 1, Variant::EasyDense, &training, 0).unwrap();
    assert_eq!(r.diverged_units(), 1);
    assert_eq!(r.units[0].epsilon, 1.0);
    assert!(r.reconstruction.iter().all(|v| *v == 0.0));
    assert_eq!(r.energy, 0.0);
}
