use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use vfmdet::harness::{
    evaluate, generate_synthetic_dataset, load_checkpoint, pretrain_attributes, run_ablation, run_detect, save_attribute_head,
    train, AblationAxis, Config, DetectFlags, Preset, TrainOptions, VfmDet,
};
use vfmdet::vatt2vec::{get_text_embeddings, AttributeSchema};

#[derive(Parser)]
#[command(name = "vfmdet", version, about = "Vehicle detection with a frozen encoder and attribute alignment")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (PNG images and annotations.jsonl).
    GenData,
    /// Pretrain the attribute head on synthetic crops.
    PretrainAttr,
    /// Train the detector.
    Train {
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Cap on optimizer steps.
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; the checkpoint's configured data otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run a checkpoint on one image.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        overlay: bool,
        #[arg(long)]
        attributes: bool,
        #[arg(long)]
        attention_dump: bool,
    },
    /// Train and score every level of one axis, or of all four.
    Ablate {
        /// learnable-tokens, fusion, attr-usage, loss or all.
        #[arg(long, default_value = "all")]
        axis: String,
    },
    /// Resolve the tag embeddings and write them with the schema.
    ExportEmbeddings,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: vfmdet::Error| e.to_string())
}

fn resolve(common: &Common) -> anyhow::Result<Config> {
    let mut config = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(p) = common.preset {
        config.preset = p;
    }
    config.validate()?;
    Ok(config)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let out = &cli.common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::GenData => {
            let config = resolve(&cli.common)?;
            let schema = match &config.schema {
                Some(p) => AttributeSchema::load(p)?,
                None => AttributeSchema::vehicle(),
            };
            let ann = generate_synthetic_dataset(out, config.seed, &config.data, &schema)?;
            println!("wrote {} images, annotations in {}", config.data.num_images, ann.display());
        }
        Command::PretrainAttr => {
            let config = resolve(&cli.common)?;
            let mut model = VfmDet::from_config(&config)?;
            let report = pretrain_attributes(&mut model)?;
            let path = out.join("attr_head.bin");
            save_attribute_head(&model, &report, &path)?;
            write_json(&out.join("pretrain_report.json"), &report)?;
            println!(
                "initial loss {:.4}, final loss {:.4}, min group accuracy {:.3}; weights in {}",
                report.initial_loss,
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                report.min_group_accuracy(),
                path.display()
            );
        }
        Command::Train { resume, max_steps, quiet } => {
            let mut config = resolve(&cli.common)?;
            if let Some(m) = max_steps {
                config.train.max_steps = m;
            }
            let mut model = VfmDet::from_config(&config)?;
            let samples = model.dataset()?;
            let report = train(
                &mut model,
                &samples,
                &TrainOptions {
                    out_dir: Some(out.clone()),
                    resume,
                    stop_at: None,
                    verbose: !quiet,
                },
            )?;
            let eval = evaluate(&model, &samples)?;
            write_json(&out.join("train_eval.json"), &eval)?;
            println!(
                "{} steps, loss {:.4} -> {:.4}; training-set AP {:.3} AP50 {:.3} AP75 {:.3}; checkpoint {}",
                report.logs.len(),
                report.first_loss(),
                report.logs.last().map_or(f64::NAN, |l| l.losses.total),
                eval.ap,
                eval.ap50,
                eval.ap75,
                report.checkpoint.as_deref().unwrap_or(Path::new("-")).display()
            );
        }
        Command::Eval { checkpoint, data } => {
            let (mut model, _) = load_checkpoint(&checkpoint)?;
            if data.is_some() {
                model.config.data_dir = data;
            }
            let samples = model.dataset()?;
            let eval = evaluate(&model, &samples)?;
            write_json(&out.join("eval.json"), &eval)?;
            println!("{} images: AP {:.3} AP50 {:.3} AP75 {:.3}", samples.len(), eval.ap, eval.ap50, eval.ap75);
        }
        Command::Detect {
            checkpoint,
            image,
            overlay,
            attributes,
            attention_dump,
        } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let flags = DetectFlags {
                overlay,
                attributes,
                attention_dump,
            };
            let (output, files) = run_detect(&model, &image, out, flags)?;
            for d in &output.detections {
                let b = d.bbox;
                print!("{} {:.3} [{:.1}, {:.1}, {:.1}, {:.1}]", d.class, d.score, b[0], b[1], b[2], b[3]);
                if let Some(tags) = &d.attributes {
                    let t: Vec<String> = tags.iter().map(|t| format!("{}={}", t.group, t.tag)).collect();
                    print!(" {}", t.join(", "));
                }
                println!();
            }
            println!("detections in {}", files.detections.display());
        }
        Command::Ablate { axis } => {
            let config = resolve(&cli.common)?;
            let axes: Vec<AblationAxis> = if axis == "all" { AblationAxis::ALL.to_vec() } else { vec![axis.parse()?] };
            let samples = VfmDet::from_config(&config)?.dataset()?;
            let mut tables = Vec::new();
            for a in axes {
                let table = run_ablation(&config, a, &samples, &samples, true)?;
                println!("{}", table.to_markdown());
                std::fs::write(out.join(format!("ablation_{}.md", a.name())), table.to_markdown())?;
                tables.push(table);
            }
            write_json(&out.join("ablation.json"), &tables)?;
        }
        Command::ExportEmbeddings => {
            let config = resolve(&cli.common)?;
            let schema = match &config.schema {
                Some(p) => AttributeSchema::load(p)?,
                None => AttributeSchema::vehicle(),
            };
            let table = get_text_embeddings(&schema, &config.embeddings)?;
            if table.rows() != schema.num_tags() {
                bail!("provider returned {} rows for {} tags", table.rows(), schema.num_tags());
            }
            let path = out.join("embeddings.tsv");
            table.save(&path)?;
            schema.save(&out.join("schema.txt"))?;
            println!("{} tags x {} dims, sha256 {}, in {}", table.rows(), table.dim, table.hash(), path.display());
        }
    }
    Ok(())
}
