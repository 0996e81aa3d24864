use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use uncreg::affine_basis;
use uncreg::basis::{bspline_basis_with_cap, joint_basis, BasisSpec, DesignMatrix};
use uncreg::demons::{demons_fit, demons_sample, DemonsMode, SmoothingKernel, VarianceFormula};
use uncreg::downstream::{ensemble_labels, entropy_map, majority_vote, warp_labels};
use uncreg::grid::{CoordField, Grid, Mask, MeanStdField};
use uncreg::io::{self, ValueKind, Volume};
use uncreg::metrics::losses::{
    loss_coord, loss_mask, loss_seg, loss_total, loss_uncer, std_from_log_variance, Likelihood, LossParts, LossWeights,
    MaskPrediction, Norm,
};
use uncreg::metrics::{dice_score, format_sig9, pearson, report, spearman, summarize_samples};
use uncreg::synth::{self, Affine, AtlasPattern, Calibration, NoiseSpec, SigmaPattern, SynthSpec};
use uncreg::wls::{
    self, coefficient_variance, leading_modes, mode_displacement, most_likely_field, sample_fields, ModeScaling,
    NoiseModel, TransformPosterior,
};

use crate::args::*;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { cmd: SynthCmd::Gen(a) } => synth_gen(a),
        Command::Fit { cmd } => match cmd {
            FitCmd::Affine(a) => fit_affine(a),
            FitCmd::Bspline(a) => fit_bspline(a),
            FitCmd::Demons(a) => fit_demons(a),
        },
        Command::Sample(a) => sample(a),
        Command::Variance(a) => variance(a),
        Command::Modes(a) => modes(a),
        Command::WarpLabels(a) => warp(a),
        Command::Entropy(a) => entropy(a),
        Command::Metrics { cmd } => match cmd {
            MetricsCmd::Dice(a) => dice(a),
            MetricsCmd::Corr(a) => corr(a),
        },
        Command::Loss { cmd } => match cmd {
            LossCmd::Coord(a) => loss_coord_cmd(a),
            LossCmd::Mask(a) => loss_mask_cmd(a),
            LossCmd::Seg(a) => loss_seg_cmd(a),
            LossCmd::Uncer(a) => loss_uncer_cmd(a),
            LossCmd::Total(a) => loss_total_cmd(a),
        },
        Command::Convert(a) => convert(a),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_field(path: &Path) -> Result<MeanStdField> {
    io::read_mean_std_field(path).with_context(|| format!("reading field {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// synth ----------------------------------------------------------------

fn parse_affine(s: &str) -> Result<Affine> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .context("--affine expects 12 comma-separated numbers")?;
    ensure!(v.len() == 12, "--affine expects 12 numbers, got {}", v.len());
    Ok(Affine {
        matrix: std::array::from_fn(|r| std::array::from_fn(|c| v[4 * r + c])),
        translation: std::array::from_fn(|r| v[4 * r + 3]),
    })
}

fn synth_spec(a: &SynthGenArgs) -> Result<SynthSpec> {
    if let Some(path) = &a.spec {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut spec: SynthSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        spec.seed = a.seed;
        return Ok(spec);
    }
    let pattern = match a.pattern {
        Pattern::Constant => SigmaPattern::Constant,
        Pattern::Radial => SigmaPattern::RadialRamp,
        Pattern::Cortex => SigmaPattern::Cortex {
            shell_fraction: a.shell_fraction,
            shell_width_mm: a.shell_width,
        },
    };
    let calibration = match a.calibration {
        CalibrationArg::Calibrated => Calibration::Calibrated,
        CalibrationArg::Scaled => Calibration::Scaled {
            factor: a.calibration_factor,
        },
        CalibrationArg::Flat => Calibration::Flat,
    };
    let atlas = match a.atlas {
        AtlasArg::Shells => AtlasPattern::Shells { labels: a.labels },
        AtlasArg::Stripes => AtlasPattern::Stripes {
            labels: a.labels,
            width_mm: a.stripe_width,
        },
    };
    Ok(SynthSpec {
        dims: [a.dims; 3],
        spacing: [a.spacing; 3],
        mask_radius_mm: a.radius,
        affine: a.affine.as_deref().map(parse_affine).transpose()?.unwrap_or_default(),
        bumps: synth::random_bumps(a.bumps, a.radius, a.seed),
        noise: NoiseSpec {
            pattern,
            sigma_min: a.sigma_min,
            sigma_max: a.sigma_max,
        },
        calibration,
        atlas,
        seed: a.seed,
    })
}

fn synth_gen(a: SynthGenArgs) -> Result<()> {
    let spec = synth_spec(&a)?;
    let out = synth::generate(&spec)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ext = a.format.ext();
    let p = |name: &str| a.out.join(format!("{name}.{ext}"));
    let grid = out.field.grid;
    io::write_mean_std_field(p("field"), &out.field)?;
    io::write_mask(p("mask"), &out.mask)?;
    io::write_label_volume(p("subject_seg"), &out.subject_seg)?;
    io::write_label_volume(p("atlas_seg"), &out.atlas_seg)?;
    let truth = Volume {
        grid,
        channels: 3,
        data: out.truth.concat(),
    };
    io::write_volume(p("truth"), &truth, ValueKind::Float)?;
    io::write_volume(
        p("sigma"),
        &Volume {
            grid,
            channels: 1,
            data: out.true_sigma.clone(),
        },
        ValueKind::Float,
    )?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "masked_voxels = {}", out.mask.count());
    for name in ["field", "mask", "truth", "sigma", "subject_seg", "atlas_seg"] {
        let _ = writeln!(manifest, "{name} = {name}.{ext}");
    }
    let _ = writeln!(manifest, "spec = {}", serde_json::to_string(&spec)?);
    write_text(&a.out.join("manifest.txt"), &manifest)
}

// fit ------------------------------------------------------------------

fn finish_fit(p: &TransformPosterior, phi: &DesignMatrix, a: &FitArgs, field: &MeanStdField) -> Result<()> {
    io::write_posterior(&a.out, p)?;
    if let Some(f) = &a.field_out {
        io::write_coord_field(f, &most_likely_field(p, phi)?, &field.mask)?;
    }
    let pruned = p.pruned().len();
    eprintln!(
        "fitted {} columns ({} active, {pruned} pruned), epsilon {}",
        p.columns,
        p.active.len(),
        format_sig9(p.directions[0].epsilon)
    );
    Ok(())
}

fn fit(field: &MeanStdField, phi: &DesignMatrix, a: &FitArgs) -> Result<TransformPosterior> {
    Ok(if a.weighting.is_weighted() {
        wls::fit_weighted(field, phi, a.epsilon)?
    } else {
        wls::fit_unweighted(field, phi, a.epsilon)?
    })
}

fn fit_affine(a: FitArgs) -> Result<()> {
    let field = read_field(&a.field)?;
    let phi = affine_basis(&field.grid, &field.mask)?;
    let p = fit(&field, &phi, &a)?;
    finish_fit(&p, &phi, &a, &field)
}

fn fit_bspline(a: BsplineArgs) -> Result<()> {
    let field = read_field(&a.fit.field)?;
    let (bs, _) = bspline_basis_with_cap(&field.grid, &field.mask, a.spacing, a.max_columns)?;
    match a.linear {
        Linear::None => {
            let p = fit(&field, &bs, &a.fit)?;
            finish_fit(&p, &bs, &a.fit, &field)
        }
        Linear::Joint => {
            let phi = joint_basis(&[affine_basis(&field.grid, &field.mask)?, bs])?;
            let p = fit(&field, &phi, &a.fit)?;
            finish_fit(&p, &phi, &a.fit, &field)
        }
        Linear::Sequential => {
            let lin = affine_basis(&field.grid, &field.mask)?;
            let s = wls::sequential_fit_with(&field, &lin, &bs, a.fit.epsilon, a.fit.weighting.is_weighted())?;
            io::write_posterior(&a.fit.out, &s.nonlinear)?;
            io::write_posterior(with_suffix(&a.fit.out, ".affine.utp"), &s.linear)?;
            if let Some(f) = &a.fit.field_out {
                io::write_coord_field(f, &s.composed_field(&lin, &bs)?, &field.mask)?;
            }
            Ok(())
        }
    }
}

fn fit_demons(a: DemonsArgs) -> Result<()> {
    let field = read_field(&a.field)?;
    let kernel = SmoothingKernel::gaussian(a.kernel_sigma, a.truncation)?;
    let mode = match a.mode {
        ModeArg::Plain => DemonsMode::Plain,
        ModeArg::Precision => DemonsMode::Precision,
    };
    let formula = if a.plain_kernel_variance {
        VarianceFormula::PlainKernel
    } else {
        VarianceFormula::SelfConsistent
    };
    let p = demons_fit(&field, &kernel, mode, formula)?;
    io::write_nonparam(&a.out, &p)?;
    Ok(())
}

// sample / variance / modes ----------------------------------------------

fn basis_for(p: &TransformPosterior, field: &MeanStdField) -> Result<DesignMatrix> {
    p.basis
        .build(&field.grid, &field.mask)
        .context("rebuilding the design matrix from the posterior's basis")
}

fn sample(a: SampleArgs) -> Result<()> {
    ensure!(a.n >= 1, "--n must be >= 1");
    let field = read_field(&a.field)?;
    let noise = if a.literal_paper_noise {
        NoiseModel::VarianceScaled
    } else {
        NoiseModel::StdScaled
    };
    let samples = if let Some(path) = &a.posterior {
        let p = io::read_posterior(path)?;
        let phi = basis_for(&p, &field)?;
        sample_fields(&p, &phi, &field, a.n, a.seed, noise)?
    } else {
        let prefix = a.demons.as_ref().expect("clap enforces --posterior or --demons");
        let np = io::read_nonparam(prefix)?;
        ensure!(np.mask == field.mask, "demons posterior and field masks differ");
        demons_sample(&field, &np.kernel, np.mode, a.n, a.seed, noise)?
    };
    io::write_samples(&a.out, &samples, &field.mask)?;
    if let Some(s) = &a.summary {
        io::write_mean_std_field(s, &summarize_samples(&samples, &field.mask)?)?;
    }
    Ok(())
}

fn variance(a: VarianceArgs) -> Result<()> {
    let p = io::read_posterior(&a.posterior)?;
    let var = coefficient_variance(&p);
    let is_txt = a.out.extension().is_some_and(|e| e == "txt");
    match (&p.basis, is_txt) {
        (BasisSpec::Bspline { lattice }, false) => {
            let grid = Grid::new(lattice.dims, lattice.spacing, lattice.origin)?;
            let data = var.concat();
            io::write_volume(
                &a.out,
                &Volume {
                    grid,
                    channels: 3,
                    data,
                },
                ValueKind::Float,
            )?;
        }
        (_, false) => bail!("volume output needs a B-spline posterior; use a .txt path"),
        (_, true) => {
            let mut text = String::from("column\tvar_x\tvar_y\tvar_z\n");
            for c in 0..p.columns {
                let _ = writeln!(
                    text,
                    "{c}\t{}\t{}\t{}",
                    format_sig9(var[0][c]),
                    format_sig9(var[1][c]),
                    format_sig9(var[2][c])
                );
            }
            write_text(&a.out, &text)?;
        }
    }
    Ok(())
}

fn modes(a: ModesArgs) -> Result<()> {
    let field = read_field(&a.field)?;
    let p = io::read_posterior(&a.posterior)?;
    let phi = basis_for(&p, &field)?;
    let bundle = leading_modes(&p, a.k, a.oversample, a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut text = String::from("mode\tlambda_x\tlambda_y\tlambda_z\n");
    for i in 0..bundle.len() {
        let d = &bundle.directions;
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}",
            i + 1,
            format_sig9(d[0].values[i]),
            format_sig9(d[1].values[i]),
            format_sig9(d[2].values[i])
        );
    }
    write_text(&a.out.join("eigenvalues.txt"), &text)?;
    let scaling = if a.sqrt_scaling {
        ModeScaling::SqrtEigenvalue
    } else {
        ModeScaling::Eigenvalue
    };
    for i in 0..bundle.len() {
        for &k in &a.scales {
            let f = mode_displacement(&p, &phi, &bundle, i, k, scaling)?;
            let name = format!("mode{}_k{}.uaf", i + 1, format_sig9(k));
            io::write_coord_field(a.out.join(name), &f, &field.mask)?;
        }
    }
    Ok(())
}

// labels -----------------------------------------------------------------

fn warp(a: WarpArgs) -> Result<()> {
    let mask = io::read_mask(&a.mask)?;
    let atlas = io::read_label_volume(&a.atlas)?;
    if let Some(f) = &a.field {
        let field = io::read_coord_field(f, &mask)?;
        io::write_label_volume(&a.out, &warp_labels(&field, &mask, &atlas)?)?;
    } else {
        let path = a.samples.as_ref().expect("clap enforces --field or --samples");
        let samples = io::read_samples(path, &mask)?;
        let dist = ensemble_labels(&samples, &mask, &atlas)?;
        io::write_label_distribution(&a.out, &dist)?;
        if let Some(m) = &a.majority {
            io::write_label_volume(m, &majority_vote(&dist))?;
        }
    }
    Ok(())
}

fn entropy(a: EntropyArgs) -> Result<()> {
    let dist = io::read_label_distribution(&a.dist)?;
    io::write_scalar(&a.out, &entropy_map(&dist))?;
    if let Some(m) = &a.majority {
        io::write_label_volume(m, &majority_vote(&dist))?;
    }
    Ok(())
}

// metrics / losses -------------------------------------------------------

fn dice(a: DiceArgs) -> Result<()> {
    let x = io::read_label_volume(&a.a)?;
    let y = io::read_label_volume(&a.b)?;
    let r = dice_score(&x, &y, a.labels.as_deref())?;
    let names: Vec<String> = r.per_label.iter().map(|(l, _)| format!("dice_{l}")).collect();
    let mut rows: Vec<(&str, f64)> = names
        .iter()
        .map(String::as_str)
        .zip(r.per_label.iter().map(|x| x.1))
        .collect();
    rows.push(("dice_mean", r.mean));
    print!("{}", report(rows));
    for l in r.skipped {
        println!("skipped\t{l}");
    }
    Ok(())
}

fn corr(a: CorrArgs) -> Result<()> {
    let (var, err) = if let Some(f) = &a.field {
        let field = read_field(f)?;
        let truth = io::read_coord_field(&a.truth, &field.mask)?;
        uncreg::metrics::variance_and_squared_error(&field, &truth)?
    } else {
        let np = io::read_nonparam(a.demons.as_ref().expect("clap enforces --field or --demons"))?;
        let truth = io::read_coord_field(&a.truth, &np.mask)?;
        let m = np.mask.count();
        let var = (0..m)
            .map(|i| (0..3).map(|j| np.variance.channels[j][i]).sum())
            .collect();
        let err = (0..m)
            .map(|i| {
                (0..3)
                    .map(|j| (np.mean.channels[j][i] - truth.channels[j][i]).powi(2))
                    .sum()
            })
            .collect();
        (var, err)
    };
    print!(
        "{}",
        report([
            ("spearman", spearman(&var, &err)?),
            ("pearson", pearson(&var, &err)?),
            ("voxels", var.len() as f64),
        ])
    );
    Ok(())
}

fn loss_coord_cmd(a: LossCoordArgs) -> Result<()> {
    let mask = io::read_mask(&a.mask)?;
    let pred = io::read_coord_field(&a.pred, &mask)?;
    let truth = io::read_coord_field(&a.truth, &mask)?;
    let norm = match a.norm {
        NormArg::L1 => Norm::L1,
        NormArg::L2 => Norm::L2,
    };
    print!("{}", report([("loss_coord", loss_coord(&pred, &truth, norm)?)]));
    Ok(())
}

fn loss_mask_cmd(a: LossMaskArgs) -> Result<()> {
    let probs = io::read_scalar(&a.pred)?;
    let truth = io::read_mask(&a.truth)?;
    let pred = MaskPrediction::new(probs.grid, probs.values)?;
    print!("{}", report([("loss_mask", loss_mask(&pred, &truth)?)]));
    Ok(())
}

fn loss_seg_cmd(a: LossSegArgs) -> Result<()> {
    let warped = io::read_label_volume(&a.warped)?;
    let truth = io::read_label_volume(&a.truth)?;
    let mask = io::read_mask(&a.mask)?;
    print!("{}", report([("loss_seg", loss_seg(&warped, &truth, &mask)?)]));
    Ok(())
}

fn loss_uncer_cmd(a: LossUncerArgs) -> Result<()> {
    let field = read_field(&a.field)?;
    let truth = io::read_coord_field(&a.truth, &field.mask)?;
    let std = match &a.log_variance {
        Some(lv) => {
            let v = io::read_coord_field(lv, &field.mask)?;
            CoordField {
                channels: v.channels.map(|c| c.into_iter().map(std_from_log_variance).collect()),
            }
        }
        None => field.masked_std(),
    };
    let dist = match a.likelihood {
        LikelihoodArg::Gaussian => Likelihood::Gaussian,
        LikelihoodArg::Laplace => Likelihood::Laplace,
    };
    print!(
        "{}",
        report([("loss_uncer", loss_uncer(&field.masked_mean(), &std, &truth, dist)?)])
    );
    Ok(())
}

fn loss_total_cmd(a: LossTotalArgs) -> Result<()> {
    let w = LossWeights::new(a.lambda_mask, a.lambda_seg, a.lambda_uncer)?;
    let parts = LossParts {
        coord: a.coord,
        mask: a.mask_loss,
        seg: a.seg,
        uncer: a.uncer,
    };
    print!("{}", report([("loss_total", loss_total(&parts, &w))]));
    Ok(())
}

// convert ------------------------------------------------------------------

fn convert(a: ConvertArgs) -> Result<()> {
    if let Some(input) = &a.input {
        let v = io::read_volume(input)?;
        let kind = match a.kind {
            KindArg::Float => ValueKind::Float,
            KindArg::Label => ValueKind::Label,
            KindArg::Mask => ValueKind::Mask,
        };
        io::write_volume(&a.out, &v, kind)?;
        return Ok(());
    }
    let mask: Mask = io::read_mask(a.mask.as_ref().expect("clap requires --mask"))?;
    let mean = io::read_volume(a.mean.as_ref().expect("clap requires --mean"))?;
    ensure!(mean.channels == 3, "--mean needs 3 channels, found {}", mean.channels);
    let (spread, log) = match (&a.std, &a.log_variance) {
        (Some(s), None) => (io::read_volume(s)?, false),
        (None, Some(l)) => (io::read_volume(l)?, true),
        _ => bail!("give exactly one of --std or --log-variance"),
    };
    ensure!(
        spread.channels == 3,
        "spread input needs 3 channels, found {}",
        spread.channels
    );
    let n = mask.grid.len();
    let std: [Vec<f64>; 3] = std::array::from_fn(|j| {
        spread
            .channel(j)
            .iter()
            .enumerate()
            .map(|(i, &v)| match (mask.contains(i), log) {
                (false, _) => 1.0,
                (true, true) => std_from_log_variance(v),
                (true, false) => v,
            })
            .collect()
    });
    let mean_ch: [Vec<f64>; 3] = std::array::from_fn(|j| {
        (0..n)
            .map(|i| if mask.contains(i) { mean.channel(j)[i] } else { 0.0 })
            .collect()
    });
    let field = MeanStdField::new(mask.grid, mean_ch, std, mask)?;
    io::write_mean_std_field(&a.out, &field)?;
    Ok(())
}
