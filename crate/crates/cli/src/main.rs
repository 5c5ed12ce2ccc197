//! `xlit`: one binary for the whole pipeline — romanize text, build paired
//! corpora, train the tokenizer and the encoder, and evaluate cross-script
//! alignment.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime error. Diagnostics go to
//! stderr; data goes to files or stdout.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use xlit_core::corpus::{
    build_pairs, load_pairs, read_records, sample_fraction, write_pairs, write_records,
    PairingOptions, Vocab,
};
use xlit_core::encoder::EncoderParams;
use xlit_core::eval;
use xlit_core::romanizer::{Fallback, RomanizeOptions, Romanizer, ScriptTag};
use xlit_core::synth::{gen_synthetic, SyntheticSpec};
use xlit_core::tensor::load_checkpoint;
use xlit_core::trainer::{run_ablation_grid, train, TrainConfig};

/// Output format schema versions, printed by --version.
const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nformats: corpus-jsonl=1 vocab-json=1 checkpoint=1 metrics-csv=1",
    " retrieval-report=1 ablation-report=1 centroid-csv=1 pca-csv=1"
);

#[derive(Parser)]
#[command(name = "xlit", version, long_version = LONG_VERSION)]
#[command(
    about = "Cross-script alignment pipeline: romanization, paired corpora, contrastive MLM training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    Drop,
    Escape,
}

#[derive(Clone, Copy, ValueEnum)]
enum SecondScript {
    Latn,
    Toyb,
}

#[derive(Args)]
struct RulesOpt {
    /// Rule-table file; built-in tables when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Preserve letter case instead of lowercasing.
    #[arg(long)]
    keep_case: bool,
    /// What to do with unmapped non-ASCII codepoints.
    #[arg(long, value_enum, default_value = "drop")]
    fallback: FallbackArg,
}

impl RulesOpt {
    fn build(&self) -> Result<Romanizer> {
        let opts = RomanizeOptions {
            keep_case: self.keep_case,
            fallback: match self.fallback {
                FallbackArg::Drop => Fallback::Drop,
                FallbackArg::Escape => Fallback::Escape,
            },
        };
        Ok(match &self.rules {
            Some(path) => Romanizer::load(path, opts)
                .with_context(|| format!("loading rules from {}", path.display()))?,
            None => Romanizer::new(xlit_core::romanizer::RuleSet::builtin(), opts),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Romanize lines from stdin to stdout (line-aligned).
    Romanize(RulesOpt),
    /// Generate a synthetic two-script corpus (JSON Lines).
    GenSynth {
        /// Output corpus path.
        #[arg(long)]
        out: PathBuf,
        /// Sentence pairs to generate.
        #[arg(long, default_value_t = 2000)]
        pairs: usize,
        /// Words in the toy Latin lexicon.
        #[arg(long, default_value_t = 200)]
        lexicon: usize,
        #[arg(long, default_value_t = 3)]
        min_words: usize,
        #[arg(long, default_value_t = 7)]
        max_words: usize,
        /// Script of the second stream (the first is always ToyA).
        #[arg(long, value_enum, default_value = "latn")]
        second: SecondScript,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Sample, script-detect and pair raw records with their romanizations.
    BuildCorpus {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of each language-script stream to keep.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Exclude sentences whose detected script is Latin.
        #[arg(long)]
        no_latin: bool,
        /// Trust the script field of the input instead of re-detecting.
        #[arg(long)]
        keep_script: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        rules: RulesOpt,
    },
    /// Train the shared byte-level BPE vocabulary on a paired corpus.
    TrainVocab {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the encoder on a paired corpus.
    Train {
        /// Train config JSON (see README for the schema).
        #[arg(long)]
        config: PathBuf,
        /// Paired corpus (JSON Lines).
        #[arg(long)]
        corpus: PathBuf,
        /// Trained vocabulary JSON.
        #[arg(long)]
        vocab: PathBuf,
        /// Output directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train and evaluate the 6-cell objective/Latin ablation grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Raw corpus (JSON Lines; pairing runs per cell so the Latin
        /// filter can differ).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cross-script pairs used for per-cell evaluation.
        #[arg(long, default_value_t = 500)]
        eval_limit: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Cross-script retrieval: texts query their transliterations.
    EvalRetrieval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Romanize every sentence before encoding (common-script mode).
        #[arg(long)]
        transliterate: bool,
        /// Evaluate at most this many pairs.
        #[arg(long)]
        limit: Option<usize>,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Script-geometry analysis: centroid matrix, PCA, alignment/uniformity.
    AnalyzeScripts {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Hidden layer to pool from; the checkpoint's pooling layer when
        /// omitted.
        #[arg(long)]
        layer: Option<usize>,
        /// Output directory for the CSV/JSON reports.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Use raw (unnormalized) sentence vectors for centroids.
        #[arg(long)]
        centroid_raw: bool,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

fn load_model(path: &Path) -> Result<EncoderParams<f32>> {
    let entries = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(EncoderParams::<f32>::from_entries(&entries)?)
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: TrainConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Romanize(rules) => {
            let rom = rules.build()?;
            let stdin = std::io::stdin().lock();
            let mut stdout = std::io::stdout().lock();
            for line in stdin.lines() {
                let line = line.context("reading stdin")?;
                writeln!(stdout, "{}", rom.romanize(&line))?;
            }
            Ok(())
        }
        Command::GenSynth {
            out,
            pairs,
            lexicon,
            min_words,
            max_words,
            second,
            seed,
        } => {
            let spec = SyntheticSpec {
                lexicon_size: lexicon,
                count: pairs,
                min_words,
                max_words,
                cipher: ScriptTag::ToyA,
                second: match second {
                    SecondScript::Latn => ScriptTag::Latn,
                    SecondScript::Toyb => ScriptTag::ToyB,
                },
                seed,
            };
            let records = gen_synthetic(&spec)?;
            write_records(&out, &records)?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        Command::BuildCorpus {
            input,
            out,
            fraction,
            no_latin,
            keep_script,
            seed,
            rules,
        } => {
            let rom = rules.build()?;
            let records =
                read_records(&input).with_context(|| format!("reading {}", input.display()))?;
            let sampled = sample_fraction(&records, fraction, seed)?;
            let pairs = build_pairs(
                &sampled,
                &rom,
                PairingOptions {
                    include_latin: !no_latin,
                    trust_declared_script: keep_script,
                },
            )?;
            write_pairs(&out, &pairs)?;
            eprintln!(
                "paired {} of {} records into {}",
                pairs.len(),
                records.len(),
                out.display()
            );
            Ok(())
        }
        Command::TrainVocab {
            pairs,
            out,
            size,
            seed,
        } => {
            let rom = Romanizer::builtin();
            let loaded = load_pairs(&pairs, &rom)?;
            let texts: Vec<String> = loaded
                .iter()
                .flat_map(|p| [p.text.clone(), p.translit.clone()])
                .collect();
            let vocab = Vocab::train(&texts, size, seed)?;
            vocab.save(&out)?;
            eprintln!(
                "vocabulary of {} tokens written to {}",
                vocab.size(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            corpus,
            vocab,
            out,
            resume,
        } => {
            let cfg = load_config(&config)?;
            let rom = Romanizer::builtin();
            let pairs = load_pairs(&corpus, &rom)?;
            let vocab = Vocab::load(&vocab)?;
            let report = train(&cfg, &pairs, &vocab, &out, resume.as_deref())?;
            let report_path = out.join("report.json");
            std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
            eprintln!(
                "trained {} steps in {:.1}s; checkpoint {}",
                report.steps_run,
                report.wall_secs,
                report.checkpoint_path.display()
            );
            Ok(())
        }
        Command::Ablate {
            config,
            corpus,
            vocab,
            out,
            eval_limit,
            threads,
        } => {
            let cfg = load_config(&config)?;
            let rom = Romanizer::builtin();
            let records = read_records(&corpus)?;
            let vocab = Vocab::load(&vocab)?;
            let report =
                run_ablation_grid(&cfg, &records, &vocab, &rom, &out, eval_limit, threads)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("ablation.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            for cell in &report.cells {
                match (&cell.metrics, &cell.error) {
                    (Some(m), _) => eprintln!(
                        "{:8} {:6}  top10 {:.3}  centroid {:.3}  align {:.3}",
                        cell.objective,
                        cell.latin,
                        m.retrieval_top10,
                        m.centroid_cross_script,
                        m.alignment
                    ),
                    (None, Some(e)) => {
                        eprintln!("{:8} {:6}  FAILED: {e}", cell.objective, cell.latin)
                    }
                    _ => {}
                }
            }
            eprintln!("report written to {}", path.display());
            Ok(())
        }
        Command::EvalRetrieval {
            model,
            vocab,
            pairs,
            k,
            transliterate,
            limit,
            out,
            threads,
        } => {
            let params = load_model(&model)?;
            let vocab = Vocab::load(&vocab)?;
            let rom = Romanizer::builtin();
            let mut loaded = load_pairs(&pairs, &rom)?;
            if let Some(n) = limit {
                loaded.truncate(n);
            }
            if k == 0 || k > loaded.len() {
                bail!(
                    "k {} outside 1..={} (use --limit or a larger corpus)",
                    k,
                    loaded.len()
                );
            }
            let report = if transliterate {
                eval::evaluate_transliterated(&params, &vocab, &loaded, &rom, k, threads)?
            } else {
                eval::retrieval_on_pairs(&params, &vocab, &loaded, k, threads, None)?
            };
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, json)?;
                    eprintln!("report written to {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::AnalyzeScripts {
            model,
            vocab,
            pairs,
            layer,
            out,
            centroid_raw,
            limit,
            threads,
        } => {
            let params = load_model(&model)?;
            let vocab = Vocab::load(&vocab)?;
            let rom = Romanizer::builtin();
            let mut loaded = load_pairs(&pairs, &rom)?;
            if let Some(n) = limit {
                loaded.truncate(n);
            }
            if loaded.is_empty() {
                bail!("no pairs to analyze");
            }
            let pool_layer = layer.unwrap_or(params.config().pool_layer);
            std::fs::create_dir_all(&out)?;

            // Embed originals and transliterations; transliterations count
            // as members of the Latin group.
            let mut sentences: Vec<String> = loaded.iter().map(|p| p.text.clone()).collect();
            sentences.extend(loaded.iter().map(|p| p.translit.clone()));
            let reps = eval::embed_sentences(&params, &vocab, &sentences, pool_layer, threads)?;
            let mut tags: Vec<ScriptTag> = loaded.iter().map(|p| p.script).collect();
            tags.extend(std::iter::repeat(ScriptTag::Latn).take(loaded.len()));

            let centroids = eval::script_centroids(&reps, &tags, !centroid_raw)?;
            let mut csv = String::from("script_a,script_b,raw_cosine,display\n");
            for (i, a) in centroids.scripts.iter().enumerate() {
                for (j, b) in centroids.scripts.iter().enumerate() {
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        a, b, centroids.raw[i][j], centroids.display[i][j]
                    ));
                }
            }
            std::fs::write(out.join("centroids.csv"), csv)?;

            let proj = eval::pca_project(&reps)?;
            let mut pca_csv = String::from("sentence_id,script,pc1,pc2\n");
            for (i, pair) in loaded.iter().enumerate() {
                pca_csv.push_str(&format!(
                    "{},{},{},{}\n",
                    pair.id, pair.script, proj.coords[i][0], proj.coords[i][1]
                ));
            }
            for (i, pair) in loaded.iter().enumerate() {
                pca_csv.push_str(&format!(
                    "{}-latn,{},{},{}\n",
                    pair.id,
                    ScriptTag::Latn,
                    proj.coords[loaded.len() + i][0],
                    proj.coords[loaded.len() + i][1]
                ));
            }
            std::fs::write(out.join("pca.csv"), pca_csv)?;

            let n = loaded.len();
            let pair_map: Vec<usize> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
            let (alignment, uniformity) = eval::alignment_uniformity(&reps, &pair_map)?;
            let summary = serde_json::json!({
                "pool_layer": pool_layer,
                "n_pairs": n,
                "alignment": alignment,
                "uniformity": uniformity,
                "pca_eigenvalues": proj.eigenvalues,
                "pca_components_used": proj.components_used,
            });
            std::fs::write(
                out.join("alignment.json"),
                serde_json::to_string_pretty(&summary)?,
            )?;
            eprintln!(
                "analysis written to {} (alignment {:.4}, uniformity {:.4})",
                out.display(),
                alignment,
                uniformity
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
