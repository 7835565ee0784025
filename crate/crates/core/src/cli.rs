//! Command-line front end: `synth | train | predict | evaluate | count`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{PostFilter, RunConfig};
use crate::data::{
    foreground_fraction, load_image, load_records, preprocess, save_record, synth_dataset, Manifest,
};
use crate::error::{Error, Result};
use crate::eval::{
    csv_header, csv_row, evaluate_region, mean_csv_row, remove_small_components, EvalReport, MeanReport, Region,
};
use crate::model::{build_model, load_checkpoint, predict_full, reference_complexity, save_checkpoint, Variant};
use crate::tensor::{io, DynTensor, Tensor};
use crate::train::{evaluate_patches, prepare_dataset, train, LOSS_HEADER};

pub const MANIFEST: &str = "manifest.tsv";
pub const CHECKPOINT: &str = "checkpoint.pcck";
pub const LOSS_LOG: &str = "loss.csv";

#[derive(Debug, Parser)]
#[command(name = "pcnet", version, about = "Vessel segmentation with pyramid attention and coarse-to-fine decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (the dataset directory for `synth`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic vessel dataset and its manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train on the dataset manifest; writes a loss log and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Whole-image probability map and binary mask for one image.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Image or volume (PCTN or PGM).
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `<out>/checkpoint.pcck`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Keep components of every size.
        #[arg(long)]
        no_postfilter: bool,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Manifest of `case  prediction  truth` lines.
        #[arg(long)]
        input: PathBuf,
        /// Manifest of `case  region-mask` lines for subregion scores.
        #[arg(long)]
        region: Option<PathBuf>,
    },
    /// Parameter and FLOP counts for every ablation variant.
    Count {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one command, writing human-readable progress to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(dir) = common.out {
                cfg.data_dir = dir;
            }
            cmd_synth(&cfg, out)
        }
        Command::Train { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(dir) = common.out {
                cfg.out_dir = dir;
            }
            cmd_train(&cfg, out)
        }
        Command::Predict {
            common,
            input,
            checkpoint,
            no_postfilter,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(dir) = common.out {
                cfg.out_dir = dir;
            }
            if no_postfilter {
                cfg.postfilter = PostFilter::Off;
            }
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT));
            cmd_predict(&cfg, &checkpoint, &input, out)
        }
        Command::Evaluate { common, input, region } => {
            let mut cfg = load_config(&common)?;
            if let Some(dir) = common.out {
                cfg.out_dir = dir;
            }
            cmd_evaluate(&cfg, &input, region.as_deref(), out)
        }
        Command::Count { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(dir) = common.out {
                cfg.out_dir = dir;
            }
            cmd_count(&cfg, out)
        }
    }
}

fn say(out: &mut dyn Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// Writes `synth_count` synthetic records and a manifest into `data_dir`.
pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let params = cfg.synth_params();
    params.validate().map_err(|e| Error::config("synth_extent", e.to_string()))?;
    create_dir(&cfg.data_dir)?;
    let records = synth_dataset(&params, cfg.synth_count, "img", cfg.seed)?;
    let entries = records.iter().map(|r| save_record(&cfg.data_dir, r)).collect::<Result<Vec<_>>>()?;
    Manifest { entries }.write(&cfg.data_dir.join(MANIFEST))?;
    let fractions: Vec<f64> = records
        .iter()
        .filter_map(|r| r.mask.as_ref().map(foreground_fraction))
        .collect();
    let mean = if fractions.is_empty() { 0.0 } else { fractions.iter().sum::<f64>() / fractions.len() as f64 };
    say(
        out,
        format!(
            "wrote {} {}D records to {}; foreground fraction {:.4}%",
            records.len(),
            cfg.spatial_rank,
            cfg.data_dir.display(),
            100.0 * mean
        ),
    )
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let records = load_records(&cfg.data_dir.join(MANIFEST), cfg.modality)?;
    let data = prepare_dataset(cfg, records)?;
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
    say(
        out,
        format!(
            "{} ({}D, base {}): {} training / {} held-out patches, batch {}, {} epochs",
            cfg.variant,
            cfg.spatial_rank,
            cfg.base_channels,
            data.train.len(),
            data.held_out.len(),
            cfg.batch_size(),
            cfg.epochs
        ),
    )?;
    let log_path = cfg.out_dir.join(LOSS_LOG);
    let mut log = format!("{LOSS_HEADER}\n");
    let checkpoint = cfg.out_dir.join(CHECKPOINT);
    let last = std::cell::Cell::new(f64::NAN);
    let model = train(
        cfg,
        &data,
        &mut |r| {
            log.push_str(&r.csv());
            log.push('\n');
            last.set(r.total);
            Ok(())
        },
        &mut |epoch, model| {
            save_checkpoint(&checkpoint, model)?;
            let total = last.get();
            say(out, format!("epoch {}: last loss {total:.5}, checkpoint {}", epoch + 1, checkpoint.display()))
        },
    )?;
    write_text(&log_path, &log)?;
    if cfg.epochs == 0 {
        save_checkpoint(&checkpoint, &model)?;
    }
    if !data.held_out.is_empty() {
        let report = evaluate_patches(&model, &data.records, &data.held_out, cfg.batch_size(), cfg.threshold)?;
        write_text(&cfg.out_dir.join("heldout.txt"), &report.to_key_value())?;
        say(out, format!("held-out patches:\n{}", report.to_key_value()))?;
    }
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint::<f32>(checkpoint)?;
    let spec = model.spec();
    if spec.variant != cfg.variant || spec.spatial_rank != cfg.spatial_rank {
        return Err(Error::config(
            "variant",
            format!(
                "checkpoint holds {} ({}D) but the config asks for {} ({}D)",
                spec.variant, spec.spatial_rank, cfg.variant, cfg.spatial_rank
            ),
        ));
    }
    let record = preprocess(&load_image(input, cfg.modality)?, &cfg.preprocess())?;
    if record.spatial_rank() != cfg.spatial_rank {
        return Err(Error::Data(format!("{} is not a {}D image", input.display(), cfg.spatial_rank)));
    }
    let prob = predict_full(&model, &record.image(), cfg.patch, cfg.stride, cfg.batch_size())?;
    let raw = prob.map(|p| u8::from(p as f64 >= cfg.threshold));
    let mask = if cfg.postfilter_enabled() { remove_small_components(&raw, cfg.min_component_size)? } else { raw };
    create_dir(&cfg.out_dir)?;
    let stem = input.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
    let (p_path, m_path) = (cfg.out_dir.join(format!("{stem}_prob.pctn")), cfg.out_dir.join(format!("{stem}_mask.pctn")));
    io::save(&p_path, &prob)?;
    io::save(&m_path, &mask)?;
    say(out, format!("wrote {} and {}", p_path.display(), m_path.display()))
}

fn load_prob(path: &Path) -> Result<Tensor<f32>> {
    Ok(match io::load_dyn(path)? {
        DynTensor::U8(t) => t.map(f32::from),
        other => other.into_f32(),
    })
}

pub fn cmd_evaluate(cfg: &RunConfig, input: &Path, region: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let pairs = Manifest::read(input)?;
    let regions = region.map(Manifest::read).transpose()?;
    let mut all = Vec::new();
    let mut sub = Vec::new();
    let mut csv = format!("{}\n", csv_header());
    let variant = cfg.variant.name();
    for e in &pairs.entries {
        let truth_path = e
            .mask
            .as_ref()
            .ok_or_else(|| Error::Data(format!("case `{}` has a prediction but no ground truth", e.id)))?;
        let pred = load_prob(&e.pixels)?;
        let truth = io::load_dyn(truth_path)?.into_mask();
        let report = evaluate_region(&pred, &truth, None, cfg.threshold)?;
        csv.push_str(&csv_row(variant, &e.id, &report));
        csv.push('\n');
        all.push(report);
        if let Some(regions) = &regions {
            let r = regions
                .entries
                .iter()
                .find(|r| r.id == e.id)
                .ok_or_else(|| Error::Data(format!("case `{}` has no region mask", e.id)))?;
            let mask = io::load_dyn(&r.pixels)?.into_mask();
            let report = evaluate_region(&pred, &truth, Some(&mask), cfg.threshold)?;
            csv.push_str(&csv_row(variant, &e.id, &report));
            csv.push('\n');
            sub.push(report);
        }
    }
    if let Some(regions) = &regions {
        if let Some(extra) = regions.entries.iter().find(|r| !pairs.entries.iter().any(|e| e.id == r.id)) {
            return Err(Error::Data(format!("region mask for unknown case `{}`", extra.id)));
        }
    }
    let mut blocks: Vec<(Region, &[EvalReport])> = vec![(Region::All, &all)];
    if regions.is_some() {
        blocks.push((Region::Subregion, &sub));
    }
    for (region, reports) in blocks {
        let mean = MeanReport::from_reports(region, reports);
        csv.push_str(&mean_csv_row(variant, &mean));
        csv.push('\n');
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        say(
            out,
            format!(
                "[{region}] cases = {}\nauc = {}\nacc = {}\nsp = {}\nse = {}\ndice = {}",
                mean.cases,
                show(mean.auc),
                show(mean.acc),
                show(mean.sp),
                show(mean.se),
                show(mean.dice)
            ),
        )?;
    }
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("eval.csv");
    write_text(&path, &csv)?;
    say(out, format!("wrote {}", path.display()))
}

pub fn cmd_count(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut csv = String::from("variant,parameters,flops\n");
    say(out, format!("{:<10} {:>12} {:>16}", "variant", "parameters", "flops"))?;
    for v in Variant::ALL {
        let mut spec = cfg.model_spec();
        spec.variant = v;
        let model = build_model::<f32>(spec, cfg.seed)?;
        let c = reference_complexity(&model)?;
        csv.push_str(&format!("{v},{},{}\n", c.parameter_count, c.flops));
        say(out, format!("{:<10} {:>12} {:>16}", v.name(), c.parameter_count, c.flops))?;
    }
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join("complexity.csv"), &csv)
}
