//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::PathBuf;

use spmk_core::body_model::{load_model, make_mini_model as build_mini, save_model, BodyModel};
use spmk_core::config::{BankConfig, ModelSource, PipelineConfig};
use spmk_core::fusion::sim::run_fusion_sim;
use spmk_core::isocenter::{
    iso_error, load_calibration, region_mask, thickness, ScannerCalibration,
};
use spmk_core::regressor::{
    self, grad_check as run_grad_check, infer_mesh, load_checkpoint, load_training_set,
    save_checkpoint, CheckpointMeta, EvalAccumulator, LossWeights, Standardizer,
};
use spmk_core::synthgen::{build_pose_bank, generate_dataset, BankSource, Manifest, ShardReader};

use crate::errors::CliError;

fn load_body_model(config: &PipelineConfig) -> Result<BodyModel, CliError> {
    Ok(match &config.model {
        ModelSource::Mini { seed } => build_mini(*seed),
        ModelSource::File { path } => load_model(path)?,
    })
}

fn build_bank(config: &PipelineConfig) -> Result<spmk_core::synthgen::PoseBank, CliError> {
    let (source, seed) = match &config.bank {
        BankConfig::Procedural { count, seed } => (BankSource::Procedural { count: *count }, *seed),
        BankConfig::File { path } => (BankSource::File(path.clone()), 0),
    };
    Ok(build_pose_bank(&source, seed)?)
}

fn ensure_output_dir(config: &PipelineConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&config.output_dir)?;
    Ok(config.output_dir.clone())
}

fn init_thread_pool(threads: usize) {
    if threads > 0 {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

pub fn make_mini_model(
    config: &PipelineConfig,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    println!("config_hash = {}", config.hash());
    let model = build_mini(seed);
    let out = match out {
        Some(path) => path,
        None => ensure_output_dir(config)?.join("mini_model.toml"),
    };
    save_model(&model, &out)?;
    println!(
        "model: seed {seed}, {} vertices, {} faces, {} keypoints -> {}",
        model.num_vertices(),
        model.num_faces(),
        model.num_keypoints(),
        out.display()
    );
    Ok(())
}

pub fn gen_data(
    config: &PipelineConfig,
    count: Option<u64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    workers: usize,
) -> Result<(), CliError> {
    init_thread_pool(workers);
    let mut gen = config.gen.clone();
    if let Some(count) = count {
        gen.count = count;
    }
    if let Some(seed) = seed {
        gen.seed = seed;
    }
    let mut config = config.clone();
    config.gen = gen.clone();
    println!("config_hash = {}", config.hash());

    let model = load_body_model(&config)?;
    let bank = build_bank(&config)?;
    let out_dir = match out {
        Some(path) => path,
        None => ensure_output_dir(&config)?.join("dataset"),
    };
    let manifest_path = generate_dataset(&model, &bank, &gen, &out_dir)?;
    let manifest = Manifest::load(&manifest_path)?;
    println!(
        "dataset: {} records in {} shards, seed {}, gen hash {} -> {}",
        manifest.count,
        manifest.shards.len(),
        manifest.seed,
        manifest.config_hash,
        manifest_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    config: &PipelineConfig,
    data: Option<PathBuf>,
    epochs: Option<usize>,
    lr: Option<f64>,
    threads: Option<usize>,
    no_validate: bool,
    out: Option<PathBuf>,
    curve: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut config = config.clone();
    if let Some(epochs) = epochs {
        config.train.epochs = epochs;
    }
    if let Some(lr) = lr {
        config.train.learning_rate = lr;
    }
    if let Some(threads) = threads {
        config.train.threads = threads;
    }
    init_thread_pool(config.train.threads);
    println!("config_hash = {}", config.hash());
    if config.train.learning_rate == 0.0 {
        eprintln!("warning: learning rate is 0; parameters will not move and the loss curve will be flat");
    }

    let model = load_body_model(&config)?;
    let manifest_path = match data {
        Some(path) => path,
        None => config.output_dir.join("dataset").join("manifest.toml"),
    };
    let jitter = config
        .train
        .augment_input_jitter
        .then_some((config.train.input_jitter_px, config.train.seed));
    let (manifest, set) = load_training_set(
        &manifest_path,
        &model,
        &config.gen.intrinsics,
        &config.train.input,
        !no_validate,
        jitter,
    )?;
    println!(
        "loaded {} records ({} input dims) from {}",
        set.count,
        set.input_dim,
        manifest_path.display()
    );

    let mut set = set;
    let standardizer = if config.train.standardize_inputs {
        let standardizer = Standardizer::fit(&set);
        standardizer.apply_to_set(&mut set);
        standardizer
    } else {
        Standardizer::identity(set.input_dim)
    };

    let n_joints = manifest.heatmap.n_joints as usize;
    let mut net = regressor::init_net(
        &config.train.input,
        &config.train.hidden,
        n_joints,
        config.train.seed,
    );
    let output = regressor::train(&mut net, &set, &model, &config.train)?;

    let out_dir = ensure_output_dir(&config)?;
    let ckpt_path = out.unwrap_or_else(|| out_dir.join("regressor.ckpt"));
    let mut layer_dims = vec![net.input_dim()];
    layer_dims.extend(net.layers.iter().map(|l| l.out_dim));
    let meta = CheckpointMeta {
        format: regressor::CHECKPOINT_FORMAT.into(),
        input: config.train.input,
        n_joints,
        layer_dims,
        config_hash: config.hash(),
        trained_epochs: config.train.epochs,
    };
    save_checkpoint(&net, &standardizer, &meta, &ckpt_path)?;

    let curve_path = curve.unwrap_or_else(|| out_dir.join("loss_curve.csv"));
    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in output.loss_curve.iter().enumerate() {
        let _ = writeln!(csv, "{epoch},{loss}");
    }
    std::fs::write(&curve_path, csv)?;

    println!(
        "trained {} epochs: first-epoch loss {:.6}, final loss {:.6}",
        output.loss_curve.len(),
        output.loss_curve.first().copied().unwrap_or(f64::NAN),
        output.loss_curve.last().copied().unwrap_or(f64::NAN),
    );
    println!("checkpoint -> {}", ckpt_path.display());
    println!("loss curve -> {}", curve_path.display());
    Ok(())
}

pub fn eval(
    config: &PipelineConfig,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    oracle: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    println!("config_hash = {}", config.hash());
    let model = load_body_model(config)?;
    let manifest_path = match data {
        Some(path) => path,
        None => config.output_dir.join("dataset").join("manifest.toml"),
    };
    let manifest = Manifest::load(&manifest_path)?;

    let net_and_spec = match (&checkpoint, oracle) {
        (Some(path), false) => {
            let (net, standardizer, meta) = load_checkpoint(path)?;
            if meta.n_joints != manifest.heatmap.n_joints as usize {
                return Err(CliError::Data(format!(
                    "checkpoint was trained for {} keypoints but the dataset header has {}",
                    meta.n_joints, manifest.heatmap.n_joints
                )));
            }
            Some((net, standardizer, meta.input))
        }
        (_, true) => None,
        (None, false) => {
            return Err(CliError::Config(
                "eval needs --checkpoint or --oracle".into(),
            ))
        }
    };

    let mut acc = EvalAccumulator::with_options(
        &model,
        config.gen.intrinsics,
        config.eval.pck_alpha,
        config.eval.px_per_cm,
    );
    for shard_path in manifest.shard_paths(&manifest_path) {
        for record in ShardReader::open(&shard_path)? {
            let pair = record?;
            match &net_and_spec {
                Some((net, standardizer, spec)) => acc.add_net(net, standardizer, spec, &pair)?,
                None => {
                    let (theta, beta) = (pair.theta, pair.beta);
                    acc.add_prediction(&pair, &theta, &beta)?;
                }
            }
        }
    }
    let report = acc.finish()?;

    let dataset_name = manifest_path.display().to_string();
    let mut csv = String::from("dataset,metric,value,unit,count\n");
    let mut row = |metric: &str, value: f64, unit: &str| {
        let _ = writeln!(csv, "{dataset_name},{metric},{value},{unit},{}", report.count);
    };
    row("2d_mpjpe", report.mpjpe_2d_px, "px");
    if let Some(cm) = report.mpjpe_2d_cm {
        row("2d_mpjpe", cm, "cm");
    }
    if let Some(pck) = report.pck {
        row(&format!("pck@{}", report.pck_alpha), pck, "fraction");
    }
    row("3d_mpjpe", report.mpjpe_3d_mm, "mm");
    row("pa_mpjpe", report.pa_mpjpe_mm, "mm");
    row("pve_t_sc", report.pve_t_sc_mm, "mm");

    let out_path = match out {
        Some(path) => path,
        None => ensure_output_dir(config)?.join("eval.csv"),
    };
    std::fs::write(&out_path, &csv)?;
    print!("{csv}");
    println!("metrics -> {}", out_path.display());
    Ok(())
}

pub fn fuse_sim(
    config: &PipelineConfig,
    frames: Option<u64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut config = config.clone();
    if let Some(frames) = frames {
        config.fusion_sim.frames = frames;
    }
    if let Some(seed) = seed {
        config.fusion_sim.seed = seed;
    }
    println!("config_hash = {}", config.hash());

    let model = load_body_model(&config)?;
    let bank = build_bank(&config)?;
    let report = run_fusion_sim(&model, &bank, &config.gen, &config.fusion_sim)?;

    let mut text = String::new();
    let _ = writeln!(text, "config_hash = \"{}\"", config.hash());
    let _ = writeln!(text, "frames = {}", report.frames);
    let _ = writeln!(text, "train_frames = {}", report.train_frames);
    let _ = writeln!(text, "eval_frames = {}", report.eval_frames);
    let _ = writeln!(text, "classifier_trained = {}", report.classifier_trained);
    let _ = writeln!(
        text,
        "classifier_accuracy = {:?}",
        report.classifier_accuracy
    );
    let _ = writeln!(
        text,
        "branch_first_mpjpe_px = {:?}",
        report.branch_first_mpjpe_px
    );
    let _ = writeln!(
        text,
        "branch_second_mpjpe_px = {:?}",
        report.branch_second_mpjpe_px
    );
    let _ = writeln!(text, "fused_mpjpe_px = {:?}", report.fused_mpjpe_px);
    let _ = writeln!(text, "label_zero_count = {}", report.label_zero_count);
    let _ = writeln!(text, "label_one_count = {}", report.label_one_count);

    let out_path = match out {
        Some(path) => path,
        None => ensure_output_dir(&config)?.join("fusion_report.toml"),
    };
    std::fs::write(&out_path, &text)?;
    print!("{text}");
    println!("report -> {}", out_path.display());
    Ok(())
}

pub fn isocenter(
    config: &PipelineConfig,
    checkpoint: Option<PathBuf>,
    input: PathBuf,
    calibration: Option<PathBuf>,
    region_name: Option<String>,
    oracle: bool,
) -> Result<(), CliError> {
    println!("config_hash = {}", config.hash());
    let model = load_body_model(config)?;
    let calib = match calibration.or_else(|| config.isocenter.calibration.clone()) {
        Some(path) => load_calibration(path)?,
        None => ScannerCalibration::identity(),
    };
    let region_name = region_name.unwrap_or_else(|| config.isocenter.region.clone());
    let region = region_mask(&model, &region_name)?;

    let net_and_spec = match (&checkpoint, oracle) {
        (Some(path), false) => {
            let (net, standardizer, meta) = load_checkpoint(path)?;
            Some((net, standardizer, meta.input))
        }
        (_, true) => None,
        (None, false) => {
            return Err(CliError::Config(
                "isocenter needs --checkpoint or --oracle".into(),
            ))
        }
    };

    let mut processed = 0usize;
    for record in ShardReader::open(&input)? {
        let pair = record?;
        let body = match &net_and_spec {
            Some((net, standardizer, spec)) => {
                infer_mesh(net, standardizer, spec, &pair.heatmaps, &model)?
            }
            None => model.pose(&pair.theta, &pair.beta),
        };
        let result = thickness(&body, &region, &calib)?;
        // Ground truth from the stored parameters, for the reported error.
        let gt_body = model.pose(&pair.theta, &pair.beta);
        let gt = thickness(&gt_body, &region, &calib)?;
        let error = iso_error(&result, gt.center_height_mm, &calib);
        println!(
            "record {}: region {} thickness {:.1} mm, center {:.1} mm, displacement {:+.1} mm, error vs ground truth {:.2} mm",
            pair.id, result.region, result.thickness_mm, result.center_height_mm,
            result.displacement_mm, error
        );
        processed += 1;
    }
    println!("processed {processed} record(s)");
    Ok(())
}

pub fn grad_check(
    config: &PipelineConfig,
    seed: u64,
    samples_per_layer: usize,
    tolerance: f64,
) -> Result<(), CliError> {
    println!("config_hash = {}", config.hash());
    if tolerance <= 0.0 {
        return Err(CliError::Config("tolerance must be positive".into()));
    }
    let model = load_body_model(config)?;
    let bank = build_bank(config)?;
    let pair = spmk_core::synthgen::generate_record(&model, &bank, &config.gen, 0)?;
    let spec = config.train.input;
    let net = regressor::init_net(&spec, &config.train.hidden, model.num_keypoints(), seed);
    let input = spec.featurize(&pair.heatmaps)?;
    let weights = LossWeights {
        w_param: 1.0,
        w_joint: 1.0,
    };
    let report = run_grad_check(
        &net,
        &input,
        &pair.theta,
        &pair.beta,
        &model,
        &weights,
        samples_per_layer,
        seed,
    )?;
    println!(
        "checked {} parameters; max relative error {:.3e} (layer {}, index {}: analytic {:.6e}, numeric {:.6e})",
        report.checked_params,
        report.max_rel_error,
        report.worst.0,
        report.worst.1,
        report.worst.2,
        report.worst.3,
    );
    if report.max_rel_error >= tolerance {
        return Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {:.3e} ≥ tolerance {tolerance:.1e}",
            report.max_rel_error
        )));
    }
    println!("gradient check passed (tolerance {tolerance:.1e})");
    Ok(())
}
