//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::RangedU64ValueParser;
use clap::{Parser, Subcommand};

use crate::cells::CellKind;
use crate::config::RunConfig;
use crate::data::{
    captions_to_tsv, load_captions, parse_splits, references_by_image, splits_to_tsv, synth_corpus, FeatureStore,
    MAX_GRAMMAR_SIZE,
};
use crate::decode::{decode_images, format_captions, DEFAULT_BEAM, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::gradcheck::{check_model, random_example, randomize_parameters, small_config, FD_TOLERANCE};
use crate::metrics::evaluate;
use crate::model::{load_checkpoint, save_checkpoint, CaptionerModel, ModelConfig};
use crate::train::{prepare_data, train};

pub const CAPTIONS_FILE: &str = "captions.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";
pub const CONFIG_ECHO_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.tsv";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

const CONFIG_HELP: &str = "Settings are read from --config (flat `key = value` lines) and then \
overridden by each --set key=value in order. Run `lcnn keys` for the list of keys.";

#[derive(Parser, Debug)]
#[command(name = "lcnn", version, about = "Language-CNN image captioning", after_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic caption/feature corpus.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n_images: u64,
        /// Words per attribute slot (1 to 16).
        #[arg(long, default_value_t = 8)]
        grammar: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes the checkpoint, report and effective config.
    #[command(after_help = CONFIG_HELP)]
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value`, applied after --config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory with captions.tsv, features.tsv and optionally splits.tsv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Decode captions for every image in a feature file.
    Caption {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Beam width; 1 decodes greedily.
        #[arg(long, default_value_t = DEFAULT_BEAM, value_parser = RangedU64ValueParser::<usize>::new().range(1..))]
        beam: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score hypothesis captions against references.
    Eval {
        /// `image_id<TAB>caption[<TAB>logprob]` lines.
        #[arg(long)]
        hyp: PathBuf,
        /// `image_id<TAB>caption` lines, several per image allowed.
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Finite-difference check of every parameter gradient on a small model.
    #[command(after_help = CONFIG_HELP)]
    Gradcheck {
        /// Only `model.*` keys are used; when `model.cell` is absent all
        /// four cells are checked.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List every configuration key with its default.
    Keys,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::SearchTooLarge { .. } => EXIT_USAGE,
        Error::NonFiniteGradient { .. } | Error::Divergence { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Synth {
            seed,
            n_images,
            grammar,
            out: dir,
            force,
        } => {
            if grammar == 0 || grammar > MAX_GRAMMAR_SIZE {
                return Err(Error::Config(format!("--grammar must be in 1..={MAX_GRAMMAR_SIZE}")));
            }
            prepare_out_dir(&dir, force)?;
            let corpus = synth_corpus(seed, n_images as usize, grammar)?;
            write_file(&dir.join(CAPTIONS_FILE), &captions_to_tsv(&corpus.captions))?;
            write_file(&dir.join(FEATURES_FILE), &corpus.features.to_tsv())?;
            write_file(&dir.join(SPLITS_FILE), &splits_to_tsv(&corpus.splits))?;
            let _ = writeln!(out, "wrote {} images to {}", corpus.captions.len(), dir.display());
            Ok(0)
        }
        Command::Train {
            config,
            overrides,
            data,
            out: dir,
            force,
        } => cmd_train(config.as_deref(), &overrides, &data, &dir, force, out),
        Command::Caption {
            ckpt,
            features,
            beam,
            max_len,
            out: dest,
        } => {
            let (model, vocab) = load_checkpoint(&ckpt)?;
            let store = FeatureStore::load(&features)?;
            if store.dim() != model.config().feature_dim {
                return Err(Error::Checkpoint(format!(
                    "features are {}-dimensional, the model expects {}",
                    store.dim(),
                    model.config().feature_dim
                )));
            }
            let ids: Vec<String> = store.ids().map(str::to_owned).collect();
            let decoded = decode_images(&model, &store, &ids, beam, max_len)?;
            let text = format_captions(&decoded, &vocab);
            match dest {
                Some(p) => write_file(&p, &text)?,
                None => {
                    let _ = out.write_all(text.as_bytes());
                }
            }
            Ok(0)
        }
        Command::Eval { hyp, reference } => {
            let mut hyps = BTreeMap::new();
            for h in load_captions(&hyp)? {
                let text = h.text.split('\t').next().unwrap_or("").to_owned();
                if hyps.insert(h.image_id.clone(), text).is_some() {
                    return Err(Error::Contract(format!(
                        "{}: more than one hypothesis for `{}`",
                        hyp.display(),
                        h.image_id
                    )));
                }
            }
            let refs = references_by_image(&load_captions(&reference)?);
            let report = evaluate(&hyps, &refs)?;
            let _ = out.write_all(report.to_tsv().as_bytes());
            Ok(0)
        }
        Command::Gradcheck {
            config,
            overrides,
            seed,
        } => cmd_gradcheck(config.as_deref(), &overrides, seed, out, err),
        Command::Keys => {
            let text = RunConfig::default().effective_text(&ModelConfig::new(4, 1));
            for line in text.lines() {
                if !line.starts_with("model.vocab_size") && !line.starts_with("model.feature_dim") {
                    let _ = writeln!(out, "{line}");
                }
            }
            Ok(0)
        }
    }
}

fn load_run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn cmd_train(
    config: Option<&Path>,
    overrides: &[String],
    data: &Path,
    dir: &Path,
    force: bool,
    out: &mut dyn Write,
) -> Result<i32> {
    let cfg = load_run_config(config, overrides)?;
    let captions = load_captions(&data.join(CAPTIONS_FILE))?;
    let features = FeatureStore::load(&data.join(FEATURES_FILE))?;
    let splits_path = data.join(SPLITS_FILE);
    let splits = if splits_path.exists() {
        let text =
            fs::read_to_string(&splits_path).map_err(|e| Error::io(format!("reading {}", splits_path.display()), e))?;
        parse_splits(&text, &splits_path)?
    } else {
        BTreeMap::new()
    };
    let prepared = prepare_data(&captions, &features, &splits, cfg.min_count, cfg.max_words)?;
    let model_cfg = cfg.model_config(prepared.vocab.len(), features.dim())?;
    prepare_out_dir(dir, force)?;
    write_file(&dir.join(CONFIG_ECHO_FILE), &cfg.effective_text(&model_cfg))?;

    let mut model = CaptionerModel::new(model_cfg, cfg.train.seed)?;
    let validator = prepared.validator(cfg.train.eval_beam, cfg.train.max_len);
    let mut lines = String::new();
    let result = train(&mut model, &prepared.train, &validator, &cfg.train, |e| {
        let line = format!(
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}\n",
            e.epoch, e.lr, e.train_loss, e.val_cider, e.val_bleu4
        );
        let _ = out.write_all(line.as_bytes());
        lines.push_str(&line);
    });
    write_file(&dir.join(REPORT_FILE), &lines)?;
    save_checkpoint(&model, &prepared.vocab, dir)?;
    let report = result?;
    let _ = writeln!(
        out,
        "best epoch {} (val CIDEr {:.6}); checkpoint in {}",
        report.best_epoch,
        report.best_cider,
        dir.display()
    );
    Ok(0)
}

fn cmd_gradcheck(
    config: Option<&Path>,
    overrides: &[String],
    seed: u64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let cfg = load_run_config(config, overrides)?;
    let user = cfg.model_overrides();
    let cells: Vec<CellKind> = match user.get("model.cell") {
        Some(c) => vec![c.parse()?],
        None => CellKind::ALL.to_vec(),
    };
    let mut worst: f64 = 0.0;
    for cell in cells {
        let mut pairs: BTreeMap<String, String> = small_config(cell).to_pairs().into_iter().collect();
        pairs.extend(user.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut model_cfg = ModelConfig::from_pairs(&pairs)?;
        model_cfg.dropout = 0.0;
        let mut model = CaptionerModel::new(model_cfg, seed)?;
        randomize_parameters(&mut model, seed);
        let (tokens, feats) = random_example(&model, 7, seed);
        for block in check_model(&model, &tokens, &feats)? {
            let _ = writeln!(out, "{cell}\t{}\t{:.3e}", block.name, block.max_rel_err);
            worst = worst.max(block.max_rel_err);
        }
    }
    let _ = writeln!(out, "max\t{worst:.3e}");
    if worst < FD_TOLERANCE {
        Ok(0)
    } else {
        let _ = writeln!(err, "gradient check failed: {worst:.3e} exceeds {FD_TOLERANCE:e}");
        Ok(EXIT_NUMERIC)
    }
}

fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to write anyway)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
