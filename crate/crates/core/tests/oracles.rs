//! Independent reference computations for small cases.
mod common;

use nalgebra::{DMatrix, DVector};

use uncreg::basis::{bspline_basis, joint_basis};
use uncreg::downstream::{majority_vote, warp_labels, LabelDistribution};
use uncreg::grid::{CoordField, Grid, LabelVolume, Mask, MeanStdField};
use uncreg::metrics::losses::{loss_coord, Norm};
use uncreg::metrics::summarize_samples;
use uncreg::synth::{error_field, generate, random_bumps, SynthSpec};
use uncreg::wls::{fit_weighted, most_likely_field, sequential_fit, sequential_fit_with};
use uncreg::{affine_basis, DesignMatrix};

use common::{dense, dense_fit, gauss, masked, rel_err, rng, to_dmatrix};

/// Centered cubic B-spline.
fn beta3(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + a * a * a / 2.0
    } else if a < 2.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        0.0
    }
}

#[test]
fn bspline_rows_match_direct_kernel_evaluation() {
    let grid = Grid::unit([8, 8, 8]).unwrap();
    let mask = Mask::full(grid);
    let (phi, lattice) = bspline_basis(&grid, &mask, 4.0).unwrap();
    assert_eq!(lattice.dims, [7, 7, 7]);
    assert_eq!(lattice.origin, [-8.0; 3]);
    let rows = phi.to_dense();
    for (m, &n) in mask.indices().iter().enumerate() {
        let p = grid.world_of_voxel(grid.index3(n));
        for kz in 0..7 {
            for ky in 0..7 {
                for kx in 0..7 {
                    let k = [kx, ky, kz];
                    let want: f64 = (0..3)
                        .map(|a| beta3((p[a] - lattice.origin[a]) / 4.0 - k[a] as f64))
                        .product();
                    let got = rows[m][kx + 7 * (ky + 7 * kz)];
                    assert!((got - want).abs() <= 1e-12, "voxel {n} control {k:?}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn small_bspline_fit_matches_dense_pseudo_inverse() {
    let grid = Grid::unit([12, 12, 12]).unwrap();
    let mask = Mask::full(grid);
    let (phi, _) = bspline_basis(&grid, &mask, 4.0).unwrap();
    let active = phi.active_columns();
    assert_eq!(active.len(), 216);
    let mut r = rng(41);
    let n = grid.len();
    let field = MeanStdField::new(
        grid,
        std::array::from_fn(|_| (0..n).map(|_| 3.0 * gauss(&mut r)).collect()),
        std::array::from_fn(|_| (0..n).map(|_| 0.5 + 1.5 * (gauss(&mut r).abs() % 1.0)).collect()),
        mask,
    )
    .unwrap();
    let full = dense(&phi);
    let d = DMatrix::from_fn(full.nrows(), active.len(), |i, k| full[(i, active[k])]);
    let (mu, sd) = masked(&field);
    let p = fit_weighted(&field, &phi, Some(0.0)).unwrap();
    for j in 0..3 {
        let want = dense_fit(&d, &mu[j], &sd[j], true, 0.0);
        let got = DVector::from_iterator(active.len(), active.iter().map(|&c| p.coef_mean(j)[c]));
        let e = (&got - &want.coef).norm() / want.coef.norm();
        assert!(e <= 1e-8, "coefficient error {e}");
        let cov = to_dmatrix(&p.covariance_active(j).unwrap());
        assert!(rel_err(&cov, &want.cov) <= 1e-8, "{}", rel_err(&cov, &want.cov));
    }
    let fitted = most_likely_field(&p, &phi).unwrap();
    for j in 0..3 {
        let want = &full * DVector::from_column_slice(p.coef_mean(j));
        for m in 0..n {
            assert!((fitted.channels[j][m] - want[m]).abs() <= 1e-10 * want[m].abs().max(1.0));
        }
    }
}

#[test]
fn sequential_equals_joint_for_w_orthogonal_blocks() {
    let (m, a, b) = (80, 3, 5);
    let mut r = rng(43);
    let sd: Vec<f64> = (0..m).map(|_| 0.5 + gauss(&mut r).abs()).collect();
    let w = DMatrix::from_diagonal(&DVector::from_iterator(m, sd.iter().map(|s| s.powi(-2))));
    let lin = DMatrix::from_fn(m, a, |_, _| gauss(&mut r));
    let raw = DMatrix::from_fn(m, b, |_, _| gauss(&mut r));
    // remove the W-projection onto the linear block
    let proj = &lin * (lin.transpose() * &w * &lin).try_inverse().unwrap() * lin.transpose() * &w;
    let non = &raw - proj * &raw;
    assert!((lin.transpose() * &w * &non).norm() <= 1e-10);

    let rows = |x: &DMatrix<f64>| {
        (0..m)
            .map(|i| x.row(i).iter().copied().collect())
            .collect::<Vec<Vec<f64>>>()
    };
    let lin_dm = DesignMatrix::from_dense(&rows(&lin)).unwrap();
    let non_dm = DesignMatrix::from_dense(&rows(&non)).unwrap();
    let grid = Grid::unit([m, 1, 1]).unwrap();
    let field = MeanStdField::new(
        grid,
        std::array::from_fn(|_| (0..m).map(|_| 4.0 * gauss(&mut r)).collect()),
        std::array::from_fn(|_| sd.clone()),
        Mask::full(grid),
    )
    .unwrap();
    let joint = fit_weighted(
        &field,
        &joint_basis(&[lin_dm.clone(), non_dm.clone()]).unwrap(),
        Some(0.0),
    )
    .unwrap();
    let seq = sequential_fit_with(&field, &lin_dm, &non_dm, Some(0.0), true).unwrap();
    for j in 0..3 {
        let both: Vec<f64> = seq
            .linear
            .coef_mean(j)
            .iter()
            .chain(seq.nonlinear.coef_mean(j))
            .copied()
            .collect();
        for (x, y) in both.iter().zip(joint.coef_mean(j)) {
            assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}

fn bump_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        dims: [18; 3],
        spacing: [2.0; 3],
        mask_radius_mm: 15.0,
        bumps: random_bumps(3, 15.0, seed),
        seed,
        ..SynthSpec::default()
    }
}

fn masked_rmse(f: &CoordField, truth: &CoordField) -> f64 {
    let mut sq = 0.0;
    for j in 0..3 {
        for (a, b) in f.channels[j].iter().zip(&truth.channels[j]) {
            sq += (a - b).powi(2);
        }
    }
    (sq / truth.len() as f64).sqrt()
}

#[test]
fn sequential_composition_beats_affine_alone() {
    for seed in 0..5 {
        let mut spec = bump_spec(seed);
        spec.noise.sigma_min = 0.05;
        spec.noise.sigma_max = 0.5;
        let out = generate(&spec).unwrap();
        let truth = out.truth_masked();
        let f = &out.field;
        let lin = affine_basis(&f.grid, &f.mask).unwrap();
        let affine = most_likely_field(&fit_weighted(f, &lin, None).unwrap(), &lin).unwrap();
        let (s, lin, bs) = sequential_fit(f, &f.grid, &f.mask, 10.0, None).unwrap();
        let composed = s.composed_field(&lin, &bs).unwrap();
        let (c, a) = (masked_rmse(&composed, &truth), masked_rmse(&affine, &truth));
        assert!(c < a, "seed {seed}: composed {c} vs affine {a}");
    }
}

#[test]
fn joint_fit_reproduces_affine_plus_bump_truth() {
    let spec = bump_spec(7);
    let out = generate(&spec).unwrap();
    let truth = out.truth_masked();
    let clean = MeanStdField::new(
        out.field.grid,
        out.truth.clone(),
        out.field.std.clone(),
        out.mask.clone(),
    )
    .unwrap();
    let lin = affine_basis(&clean.grid, &clean.mask).unwrap();
    let (bs, _) = bspline_basis(&clean.grid, &clean.mask, 4.0).unwrap();
    let phi = joint_basis(&[lin, bs]).unwrap();
    let p = fit_weighted(&clean, &phi, None).unwrap();
    let fitted = most_likely_field(&p, &phi).unwrap();
    let rmse = masked_rmse(&fitted, &truth);
    assert!(rmse < 0.05, "joint fit rmse {rmse}");
}

#[test]
fn warp_labels_matches_voxel_lookup() {
    let atlas_grid = Grid::new([7, 6, 5], [2.0, 1.5, 2.5], [-3.0, 1.0, -2.0]).unwrap();
    let mut r = rng(47);
    let atlas = LabelVolume::new(
        atlas_grid,
        (0..atlas_grid.len())
            .map(|_| (gauss(&mut r).abs() * 3.0) as u16)
            .collect(),
    )
    .unwrap();
    let grid = Grid::unit([5, 5, 5]).unwrap();
    let mask = Mask::from_fn(grid, |i| (i[0] + i[1] + i[2]) % 4 != 0);
    let m = mask.count();
    let field = CoordField {
        channels: std::array::from_fn(|a| {
            let (lo, hi) = (
                atlas_grid.origin()[a],
                atlas_grid.world_of_voxel(atlas_grid.dims().map(|d| d - 1))[a],
            );
            (0..m)
                .map(|_| lo - 3.0 + (hi - lo + 6.0) * (gauss(&mut r).abs() % 1.0))
                .collect()
        }),
    };
    let warped = warp_labels(&field, &mask, &atlas).unwrap();
    for (k, &n) in mask.indices().iter().enumerate() {
        let p = field.point(k);
        let mut idx = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            let t = ((p[a] - atlas_grid.origin()[a]) / atlas_grid.spacing()[a]).round();
            if t < 0.0 || t > (atlas_grid.dims()[a] - 1) as f64 {
                inside = false;
            } else {
                idx[a] = t as usize;
            }
        }
        let want = if inside { atlas.get(idx) } else { 0 };
        assert_eq!(warped.labels()[n], want, "voxel {n} at {p:?}");
    }
}

#[test]
fn majority_matches_argmax() {
    let grid = Grid::unit([4, 4, 2]).unwrap();
    let mask = Mask::from_fn(grid, |i| i[0] != 1);
    let labels = vec![0u16, 3, 4, 9];
    let mut r = rng(53);
    let samples = 7u32;
    let mut counts = Vec::new();
    for _ in 0..mask.count() {
        let mut c = [0u32; 4];
        for _ in 0..samples {
            c[(gauss(&mut r).abs() * 2.0) as usize % 4] += 1;
        }
        counts.extend_from_slice(&c);
    }
    let dist = LabelDistribution::from_counts(mask.clone(), labels.clone(), counts.clone(), samples).unwrap();
    let maj = majority_vote(&dist);
    for (k, &n) in mask.indices().iter().enumerate() {
        let c = &counts[4 * k..4 * k + 4];
        let best = (0..4).fold(0, |b, i| if c[i] > c[b] { i } else { b });
        assert_eq!(maj.labels()[n], labels[best]);
    }
}

#[test]
fn entropy_of_one_two_three() {
    let grid = Grid::unit([1, 1, 1]).unwrap();
    let dist = LabelDistribution::from_counts(Mask::full(grid), vec![0, 1, 2], vec![1, 2, 3], 6).unwrap();
    let h = uncreg::downstream::entropy_map(&dist).values[0];
    let want = -[1.0f64, 2.0, 3.0].iter().map(|c| c / 6.0 * (c / 6.0).ln()).sum::<f64>();
    assert!((h - want).abs() <= 1e-12);
    assert!((h - 1.011_404_264_707_351).abs() <= 1e-12);
}

#[test]
fn coordinate_losses_match_voxel_loop() {
    let mut r = rng(59);
    let m = 64;
    let mut gen = || CoordField {
        channels: std::array::from_fn(|_| (0..m).map(|_| gauss(&mut r)).collect()),
    };
    let (a, b) = (gen(), gen());
    let (mut l1, mut l2) = (0.0, 0.0);
    for i in 0..m {
        for j in 0..3 {
            let d = a.channels[j][i] - b.channels[j][i];
            l1 += d.abs();
            l2 += d * d;
        }
    }
    assert!((loss_coord(&a, &b, Norm::L1).unwrap() - l1 / m as f64).abs() <= 1e-12);
    assert!((loss_coord(&a, &b, Norm::L2).unwrap() - l2 / m as f64).abs() <= 1e-12);
}

#[test]
fn summary_of_unit_gaussian_samples() {
    let grid = Grid::unit([3, 3, 3]).unwrap();
    let mask = Mask::full(grid);
    let mut r = rng(61);
    let samples: Vec<CoordField> = (0..1000)
        .map(|_| CoordField {
            channels: std::array::from_fn(|j| (0..27).map(|_| j as f64 + gauss(&mut r)).collect()),
        })
        .collect();
    let s = summarize_samples(&samples, &mask).unwrap();
    for j in 0..3 {
        for n in 0..27 {
            assert!((s.std[j][n] - 1.0).abs() <= 0.1, "std {}", s.std[j][n]);
        }
    }
    let pooled: f64 = (0..3).flat_map(|j| s.std[j].iter()).sum::<f64>() / 81.0;
    assert!((pooled - 1.0).abs() <= 0.05, "pooled std {pooled}");
}

#[test]
fn error_field_matches_loop() {
    let out = generate(&bump_spec(3)).unwrap();
    let e = error_field(&out.field, &out.truth).unwrap();
    for n in 0..out.field.grid.len() {
        let want = if out.mask.contains(n) {
            (0..3).map(|j| (out.field.mean[j][n] - out.truth[j][n]).powi(2)).sum()
        } else {
            0.0
        };
        assert_eq!(e.values[n], want);
    }
}
