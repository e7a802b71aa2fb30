use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use treetag::auxlabels::{self, AuxKind};
use treetag::encodings::{self, Scheme};
use treetag::metrics::{self, EvalOptions};
use treetag::pg::{self, PgConfig};
use treetag::seqfile::{self, SeqFile, SeqSentence};
use treetag::synth::{self, Pcfg, DEFAULT_ALPHABET};
use treetag::tagger::{self, TaggerModel, TrainConfig, TrainingExample};
use treetag::treebank::line_col;
use treetag::{parse_bracketed, serialize, Execution, Tree};

#[derive(Parser)]
#[command(
    name = "treetag",
    version,
    about = "Constituent parsing as sequence tagging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Linearize a trees file into a .seq file
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "relative")]
        scheme: Scheme,
        /// Auxiliary tracks: n+K, n-K or dist (repeatable or comma separated)
        #[arg(long, value_delimiter = ',')]
        aux: Vec<AuxKind>,
    },
    /// Rebuild trees from a .seq file
    Decode { input: PathBuf, output: PathBuf },
    /// Label-space statistics of a .seq file
    Stats {
        input: PathBuf,
        /// Labels seen at most this often count as rare
        #[arg(long, default_value_t = 5)]
        rare: usize,
    },
    /// Train a tagger on a .seq file
    Train(TrainArgs),
    /// Policy-gradient fine-tuning of a trained tagger
    Finetune(FinetuneArgs),
    /// Tag sentences and write the decoded trees
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Tab-separated word and POS per line, blank line between sentences
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long)]
        sequential: bool,
    },
    /// Bracketing scores of predicted trees against gold trees
    Eval {
        gold: PathBuf,
        predicted: PathBuf,
        /// Write per-n precision/recall/F1 as TSV
        #[arg(long)]
        per_n: Option<PathBuf>,
        /// Encoding used for the per-n report
        #[arg(long, default_value = "relative")]
        scheme: Scheme,
        /// Drop COLLINS punctuation tags before scoring
        #[arg(long)]
        delete_punct: bool,
        /// Strip functional annotations from labels before scoring
        #[arg(long)]
        strip_functional: bool,
    },
    /// Generate a synthetic trees file
    Synth {
        output: PathBuf,
        #[arg(long, value_enum, default_value = "pcfg")]
        kind: SynthKind,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        max_leaves: usize,
        #[arg(long, default_value_t = 12)]
        max_depth: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Pcfg,
    Random,
}

#[derive(Args)]
struct TrainArgs {
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Per-epoch loss and dev F1 as TSV
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    aux_weight: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    pos_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    distance_cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Gold training trees
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Per-epoch TSV log
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    entropy_coef: Option<f64>,
    #[arg(long)]
    burn_in: Option<u64>,
    /// Parameter tensors to keep fixed (comma separated)
    #[arg(long, value_delimiter = ',')]
    frozen: Option<Vec<String>>,
    #[arg(long)]
    noise: bool,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    noise_target: Option<f64>,
    #[arg(long)]
    noise_adaptation: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Keep the last epoch instead of the best dev F1
    #[arg(long)]
    last: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequential: bool,
}

/// A failure on input data, reported with exit code 2.
struct Failure(String);

impl<E: std::fmt::Display> From<(&Path, E)> for Failure {
    fn from((path, e): (&Path, E)) -> Self {
        Failure(format!("{}: {e}", path.display()))
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::from((path, e)))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Failure::from((path, e)))
}

fn read_trees(path: &Path) -> Result<Vec<Tree>> {
    let text = read(path)?;
    parse_bracketed(&text).map_err(|e| {
        let (line, col) = line_col(&text, e.offset());
        Failure(format!("{}:{line}:{col}: {e}", path.display()))
    })
}

fn write_trees(path: &Path, trees: &[Tree]) -> Result<()> {
    let mut text = String::new();
    for t in trees {
        text.push_str(&serialize(t));
        text.push('\n');
    }
    write(path, &text)
}

fn read_seq(path: &Path) -> Result<SeqFile> {
    seqfile::read(&read(path)?)
        .map_err(|e| Failure(format!("{}:{}: {}", path.display(), e.line, e.kind)))
}

fn load_model(path: &Path) -> Result<TaggerModel> {
    TaggerModel::load(&read(path)?).map_err(|e| Failure::from((path, e)))
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn examples(file: SeqFile) -> Vec<TrainingExample> {
    file.sentences
        .into_iter()
        .map(|s| TrainingExample {
            encoded: s.encoded,
            aux: s.aux,
        })
        .collect()
}

fn encode_cmd(input: &Path, output: &Path, scheme: Scheme, aux: Vec<AuxKind>) -> Result<()> {
    let trees = read_trees(input)?;
    let sentences = trees
        .iter()
        .map(|t| {
            let encoded = encodings::encode(t, scheme);
            let tracks = aux
                .iter()
                .map(|k| auxlabels::track(*k, t, &encoded))
                .collect();
            SeqSentence {
                encoded,
                aux: tracks,
            }
        })
        .collect();
    let file = SeqFile {
        scheme,
        aux_kinds: aux,
        sentences,
    };
    write(output, &seqfile::write(&file))
}

fn decode_cmd(input: &Path, output: &Path) -> Result<()> {
    let file = read_seq(input)?;
    let trees: Vec<Tree> = file
        .sentences
        .iter()
        .map(|s| encodings::decode(&s.encoded).map_err(|e| Failure::from((input, e))))
        .collect::<Result<_>>()?;
    write_trees(output, &trees)
}

fn stats_cmd(input: &Path, rare: usize) -> Result<()> {
    let file = read_seq(input)?;
    let encoded: Vec<_> = file.sentences.into_iter().map(|s| s.encoded).collect();
    let full = metrics::label_space_stats(&encoded, false);
    let parts = metrics::label_space_stats(&encoded, true);
    let [n, c, u] = parts.component_sizes;
    println!("sentences\t{}", encoded.len());
    println!("tokens\t{}", encoded.iter().map(|e| e.len()).sum::<usize>());
    println!("full_labels\t{}", full.total_distinct);
    println!("rare_fraction_{rare}\t{:.4}", full.rare_fraction(rare));
    println!("decomposed_labels\t{}", parts.total_distinct);
    println!("n_labels\t{n}");
    println!("c_labels\t{c}");
    println!("u_labels\t{u}");
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: args.learning_rate.unwrap_or(d.learning_rate),
        momentum: args.momentum.unwrap_or(d.momentum),
        lr_decay: args.lr_decay.unwrap_or(d.lr_decay),
        epochs: args.epochs.unwrap_or(d.epochs),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        aux_weight: args.aux_weight.unwrap_or(d.aux_weight),
        window_radius: args.window.unwrap_or(d.window_radius),
        dropout: args.dropout.unwrap_or(d.dropout),
        word_dim: args.word_dim.unwrap_or(d.word_dim),
        pos_dim: args.pos_dim.unwrap_or(d.pos_dim),
        hidden_dim: args.hidden_dim.unwrap_or(d.hidden_dim),
        distance_cap: args.distance_cap.or(d.distance_cap),
        seed: args.seed.unwrap_or(d.seed),
        execution: execution(args.sequential),
    };
    if config.aux_weight < 0.0 || !(0.0..1.0).contains(&config.dropout) {
        return Err(Failure(
            "aux weight must be >= 0 and dropout in [0, 1)".to_owned(),
        ));
    }
    let train = examples(read_seq(&args.train)?);
    let dev = match &args.dev {
        Some(path) => examples(read_seq(path)?),
        None => Vec::new(),
    };
    let trained = tagger::train_mtl(&train, &dev, &config)
        .map_err(|e| Failure::from((args.train.as_path(), e)))?;
    if let Some(path) = &args.log {
        let mut text = String::from("epoch\tlearning_rate\tloss\tdev_f1\n");
        for h in &trained.history {
            writeln!(
                text,
                "{}\t{:.6}\t{:.6}\t{:.6}",
                h.epoch, h.learning_rate, h.loss, h.dev_f1
            )
            .unwrap();
        }
        write(path, &text)?;
    }
    if let Some(epoch) = trained.best_epoch {
        eprintln!(
            "best epoch {epoch}, dev F1 {:.2}",
            100.0 * trained.history[epoch].dev_f1
        );
    }
    write(&args.out, &trained.model.save())
}

fn finetune_cmd(args: FinetuneArgs) -> Result<()> {
    let d = PgConfig::default();
    let config = PgConfig {
        samples: args.samples.unwrap_or(d.samples),
        learning_rate: args.learning_rate.unwrap_or(d.learning_rate),
        entropy_coef: args.entropy_coef.unwrap_or(d.entropy_coef),
        burn_in: args.burn_in.unwrap_or(d.burn_in),
        frozen: args.frozen.unwrap_or(d.frozen),
        noise: args.noise,
        noise_initial_std: args.noise_std.unwrap_or(d.noise_initial_std),
        noise_desired_divergence: args.noise_target.unwrap_or(d.noise_desired_divergence),
        noise_adaptation: args.noise_adaptation.unwrap_or(d.noise_adaptation),
        epochs: args.epochs.unwrap_or(d.epochs),
        select_best: !args.last,
        seed: args.seed.unwrap_or(d.seed),
        execution: execution(args.sequential),
    };
    if config.samples == 0 || config.entropy_coef < 0.0 || config.learning_rate < 0.0 {
        return Err(Failure(
            "samples must be >= 1 and coefficients >= 0".to_owned(),
        ));
    }
    let model = load_model(&args.model)?;
    let train = read_trees(&args.train)?;
    let dev = match &args.dev {
        Some(path) => read_trees(path)?,
        None => Vec::new(),
    };
    let baseline = model.clone();
    let tuned = pg::finetune(model, &baseline, &train, &dev, &config)
        .map_err(|e| Failure::from((args.train.as_path(), e)))?;
    if let Some(path) = &args.log {
        write(path, &pg::log_tsv(&tuned.log))?;
    }
    write(&args.out, &tuned.policy.save())
}

fn predict_cmd(
    model: &Path,
    input: &Path,
    output: &Path,
    batch_size: usize,
    sequential: bool,
) -> Result<()> {
    let model = load_model(model)?;
    let sentences = seqfile::read_tagged(&read(input)?)
        .map_err(|e| Failure(format!("{}:{}: {}", input.display(), e.line, e.kind)))?;
    let exec = execution(sequential);
    let mut trees = Vec::with_capacity(sentences.len());
    for batch in sentences.chunks(batch_size.max(1)) {
        for encoded in tagger::predict_batch(&model, batch, exec) {
            trees.push(encodings::decode(&encoded).map_err(|e| Failure::from((input, e)))?);
        }
    }
    write_trees(output, &trees)
}

fn eval_cmd(
    gold_path: &Path,
    pred_path: &Path,
    per_n: Option<&Path>,
    scheme: Scheme,
    options: &EvalOptions,
) -> Result<()> {
    let gold = read_trees(gold_path)?;
    let pred = read_trees(pred_path)?;
    let at = |i: usize| -> String { format!("{}: tree {}", pred_path.display(), i + 1) };
    if gold.len() != pred.len() {
        return Err(Failure(format!(
            "{}: {} trees but gold has {}",
            pred_path.display(),
            pred.len(),
            gold.len()
        )));
    }
    let mut total = metrics::BracketScore::from_counts(0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
        let s = metrics::bracket_score_with(g, p, options)
            .map_err(|e| Failure(format!("{}: {e}", at(i))))?;
        total = total.merge(&s);
    }
    println!(
        "P {:.2} R {:.2} F1 {:.2}",
        100.0 * total.precision,
        100.0 * total.recall,
        100.0 * total.f1
    );

    if let Some(path) = per_n {
        let encode = |trees: &[Tree]| {
            trees
                .iter()
                .map(|t| encodings::encode(t, scheme))
                .collect::<Vec<_>>()
        };
        let scores = metrics::per_n_f1(&encode(&gold), &encode(&pred))
            .map_err(|e| Failure::from((pred_path, e)))?;
        let mut text = String::from("n\tgold\tpredicted\tcorrect\tprecision\trecall\tf1\n");
        for (n, s) in scores {
            writeln!(
                text,
                "{n}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                s.gold_count, s.pred_count, s.true_positives, s.precision, s.recall, s.f1
            )
            .unwrap();
        }
        write(path, &text)?;
    }
    Ok(())
}

fn synth_cmd(
    output: &Path,
    kind: SynthKind,
    count: usize,
    seed: u64,
    max_leaves: usize,
    max_depth: usize,
) -> Result<()> {
    if max_leaves == 0 || max_depth == 0 {
        return Err(Failure("max leaves and max depth must be >= 1".to_owned()));
    }
    let trees: Vec<Tree> = match kind {
        SynthKind::Pcfg => Pcfg {
            max_depth: Pcfg::default().max_depth,
            max_leaves,
        }
        .corpus(seed, count),
        SynthKind::Random => (0..count as u64)
            .map(|i| {
                synth::random_tree(
                    seed.wrapping_mul(1_000_003).wrapping_add(i),
                    max_leaves,
                    max_depth,
                    DEFAULT_ALPHABET,
                )
            })
            .collect(),
    };
    write_trees(output, &trees)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode {
            input,
            output,
            scheme,
            aux,
        } => encode_cmd(&input, &output, scheme, aux),
        Command::Decode { input, output } => decode_cmd(&input, &output),
        Command::Stats { input, rare } => stats_cmd(&input, rare),
        Command::Train(args) => train_cmd(args),
        Command::Finetune(args) => finetune_cmd(args),
        Command::Predict {
            model,
            input,
            output,
            batch_size,
            sequential,
        } => predict_cmd(&model, &input, &output, batch_size, sequential),
        Command::Eval {
            gold,
            predicted,
            per_n,
            scheme,
            delete_punct,
            strip_functional,
        } => {
            let options = EvalOptions {
                delete_punct,
                strip_functional,
                ..EvalOptions::collins()
            };
            eval_cmd(&gold, &predicted, per_n.as_deref(), scheme, &options)
        }
        Command::Synth {
            output,
            kind,
            count,
            seed,
            max_leaves,
            max_depth,
        } => synth_cmd(&output, kind, count, seed, max_leaves, max_depth),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
