use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::Array2;
use serde_json::json;
use uar_core::corruptions::{corrupt, corruption_mask, CorruptionSpec};
use uar_core::dataio::{
    export_float_map, generate_synthetic_with, import_float_map, load_image, load_paired_dir, save_image,
    PairedLayout, PairedSample, SyntheticConfig,
};
use uar_harness::config::TrainConfig;
use uar_harness::diagnostics::{pooled_rank_correlation, uncertainty_diagnostics};
use uar_harness::eval::{evaluate_checkpoint, read_summary, EvalOptions};
use uar_harness::report::{build_table, write_report, ReportEntry};
use uar_harness::train::{train, TrainOptions};
use uar_harness::{Error, Result};

#[derive(Parser)]
#[command(name = "uar", version, about = "Uncertainty-aware paired image translation")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, env = "UAR_OUTPUT_ROOT", default_value = "runs", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pairs with a known noise-variance field.
    SynthData {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Train from a TOML configuration on a paired directory (A/, B/).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "run")]
        name: String,
        /// Extra checkpoints every N epochs.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Paired directory evaluated after training.
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, optionally on corrupted inputs.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Configuration the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
        /// TOML corruption spec applied to the source images.
        #[arg(long)]
        corruption: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Add noise (gaussian, uniform, impulse) to one image.
    Corrupt {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Paint a disk or ring artifact into one image.
    InjectArtifact {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the artifact mask as a float map.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Build a results table from evaluation summaries.
    Report {
        /// `APPROACH:LEVEL:PATH` where PATH is an evaluation `metrics.json`.
        #[arg(long = "entry", required = true)]
        entries: Vec<String>,
        #[arg(long, default_value = "report")]
        name: String,
    },
}

fn read_spec(path: &Path) -> Result<CorruptionSpec> {
    let text = fs::read_to_string(path)?;
    let spec: CorruptionSpec =
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    spec.validate()?;
    Ok(spec)
}

fn synth_data(root: &Path, count: usize, size: usize, seed: u64) -> Result<serde_json::Value> {
    let data = generate_synthetic_with(&SyntheticConfig::with_size(size), count, seed)?;
    let layout = PairedLayout::default();
    for sub in [&layout.source_dir, &layout.target_dir, &"truth".to_string()] {
        fs::create_dir_all(root.join(sub))?;
    }
    for t in &data {
        let id = &t.sample.id;
        save_image(&t.sample.x_a, &root.join(&layout.source_dir).join(format!("{id}.png")))?;
        save_image(&t.sample.x_b, &root.join(&layout.target_dir).join(format!("{id}.png")))?;
        export_float_map(&t.noise_variance.mapv(|v| v as f32), &root.join("truth").join(format!("{id}.f32")))?;
    }
    Ok(json!({ "dir": root, "count": data.len() }))
}

fn load_pairs(dir: &Path) -> Result<Vec<PairedSample>> {
    let ds = load_paired_dir(dir, &PairedLayout::default())?;
    for issue in &ds.issues {
        eprintln!("{}", serde_json::to_string(&json!({ "warning": issue })).expect("issue serializes"));
    }
    if ds.samples.is_empty() {
        return Err(Error::Config(format!("no image pairs found under {}", dir.display())));
    }
    Ok(ds.samples)
}

/// Noise-variance maps under `data/truth/`, present only for synthetic data.
/// `None` unless every sample has one.
fn load_truth(data: &Path, samples: &[PairedSample]) -> Result<Option<Vec<Array2<f64>>>> {
    let mut maps = Vec::with_capacity(samples.len());
    for s in samples {
        let stem = Path::new(&s.id).file_stem().unwrap_or_default();
        let path = data.join("truth").join(stem).with_extension("f32");
        if !path.is_file() {
            return Ok(None);
        }
        maps.push(import_float_map(&path)?.mapv(f64::from));
    }
    Ok(Some(maps))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let root = cli.output_root;
    match cli.command {
        Command::SynthData { count, size, seed, name } => synth_data(&root.join(name), count, size, seed),
        Command::Train { config, data, name, checkpoint_every, validation } => {
            let config = TrainConfig::load(&config)?;
            let samples = load_pairs(&data)?;
            let validation = validation.map(|v| load_pairs(&v)).transpose()?;
            let out = root.join(name);
            let options = TrainOptions { output_dir: Some(out.clone()), checkpoint_every, validation: validation.as_deref() };
            let trained = train(&config, &samples, &options)?;
            Ok(json!({
                "dir": out,
                "config_fingerprint": trained.record.config_fingerprint,
                "final_epoch": trained.record.epochs.last(),
                "final_metrics": trained.record.final_metrics,
            }))
        }
        Command::Evaluate { checkpoint, data, config, corruption, name } => {
            let config = config.map(|c| TrainConfig::load(&c)).transpose()?;
            let spec = corruption.map(|c| read_spec(&c)).transpose()?;
            let samples = load_pairs(&data)?;
            let out = root.join(name);
            let options = EvalOptions { corruption: spec.as_ref(), export_dir: Some(&out), perceptual: None };
            let (evaluation, _) = evaluate_checkpoint(&checkpoint, config.as_ref(), &samples, &options)?;

            let truth = load_truth(&data, &samples)?;
            let per_sample = evaluation
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| uncertainty_diagnostics(s, truth.as_ref().map(|t| &t[i])))
                .collect::<Result<Vec<_>>>()?;
            let pooled = match &truth {
                Some(t) => pooled_rank_correlation(&evaluation.samples, &t.iter().collect::<Vec<_>>())?,
                None => None,
            };
            let diagnostics = json!({ "pooled_rank_correlation": pooled, "samples": per_sample });
            fs::write(out.join("diagnostics.json"), serde_json::to_string_pretty(&diagnostics).expect("serializes"))?;
            Ok(json!({ "dir": out, "report": evaluation.report, "pooled_rank_correlation": pooled }))
        }
        Command::Corrupt { spec, input, output } => {
            let spec = read_spec(&spec)?;
            if spec.is_artifact() {
                return Err(Error::Config("artifact specs belong to inject-artifact".into()));
            }
            save_image(&corrupt(&load_image(&input)?, &spec)?, &output)?;
            Ok(json!({ "output": output }))
        }
        Command::InjectArtifact { spec, input, output, mask } => {
            let spec = read_spec(&spec)?;
            if !spec.is_artifact() {
                return Err(Error::Config("noise specs belong to corrupt".into()));
            }
            let image = load_image(&input)?;
            save_image(&corrupt(&image, &spec)?, &output)?;
            if let Some(mask_path) = &mask {
                let (h, w, _) = image.dim();
                let m = corruption_mask(&spec, h, w)?.mapv(|b| if b { 1.0f32 } else { 0.0 });
                export_float_map(&m, mask_path)?;
            }
            Ok(json!({ "output": output, "mask": mask }))
        }
        Command::Report { entries, name } => {
            let mut parsed = Vec::with_capacity(entries.len());
            for e in &entries {
                let mut parts = e.splitn(3, ':');
                let (Some(approach), Some(level), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::Config(format!("entry {e:?} is not APPROACH:LEVEL:PATH")));
                };
                let summary = read_summary(Path::new(path))?;
                parsed.push(ReportEntry { approach: approach.into(), level: level.into(), metrics: summary.report });
            }
            let table = build_table(&parsed);
            let out = root.join(name);
            write_report(&table, &out)?;
            Ok(json!({ "dir": out, "rows": table.rows.len() }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(value) => {
            println!("{}", json!({ "status": "ok", "result": value }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "status": "error", "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
