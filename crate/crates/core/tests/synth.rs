use uncreg::synth::{generate, random_bumps, Calibration, SynthSpec};

fn standardized(spec: &SynthSpec) -> (usize, f64, f64) {
    let out = generate(spec).unwrap();
    let mean = out.field.masked_mean();
    let std = out.field.masked_std();
    let truth = out.truth_masked();
    let mut z = Vec::new();
    for j in 0..3 {
        for m in 0..truth.len() {
            z.push((mean.channels[j][m] - truth.channels[j][m]) / std.channels[j][m]);
        }
    }
    let n = z.len() as f64;
    let mu = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (out.mask.count(), mu, var)
}

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        dims: [32; 3],
        spacing: [2.0; 3],
        mask_radius_mm: 28.0,
        bumps: random_bumps(3, 28.0, seed),
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn calibrated_residuals_are_standard_normal() {
    for seed in [1, 2, 3] {
        let (voxels, mu, var) = standardized(&spec(seed));
        assert!(voxels >= 10_000);
        assert!(mu.abs() <= 0.05, "seed {seed}: mean {mu}");
        assert!((0.9..=1.1).contains(&var), "seed {seed}: variance {var}");
    }
}

#[test]
fn overstated_std_shrinks_standardized_residuals() {
    let s = SynthSpec {
        calibration: Calibration::Scaled { factor: 2.0 },
        ..spec(4)
    };
    let (_, _, var) = standardized(&s);
    assert!((0.225..=0.275).contains(&var), "variance {var}");
}

#[test]
fn identity_transform_keeps_segmentation() {
    let s = SynthSpec {
        dims: [20; 3],
        mask_radius_mm: 16.0,
        seed: 9,
        ..SynthSpec::default()
    };
    let out = generate(&s).unwrap();
    assert_eq!(out.subject_seg, out.atlas_seg);
}

#[test]
fn generation_is_deterministic() {
    let s = SynthSpec {
        dims: [12; 3],
        mask_radius_mm: 10.0,
        ..spec(5)
    };
    assert_eq!(generate(&s).unwrap().field, generate(&s).unwrap().field);
    let other = SynthSpec { seed: 6, ..s.clone() };
    assert_ne!(generate(&s).unwrap().field, generate(&other).unwrap().field);
}

#[test]
fn invalid_specs_are_rejected() {
    let s = SynthSpec {
        mask_radius_mm: 0.1,
        dims: [4; 3],
        ..SynthSpec::default()
    };
    assert!(generate(&s).is_err());
}
