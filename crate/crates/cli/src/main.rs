//! `sidrec`: generative recommendation over semantic IDs, end to end.
//!
//! The pipeline runs as separate subcommands sharing one flat key=value
//! config: `synth` makes a deterministic dataset, `tokenize` assigns n-digit
//! semantic ids to items, `train` fits the masked-diffusion model, `eval`
//! scores held-out targets, and `decode` prints Top-K recommendations for a
//! user. `count-signals` prints the supervision census and `ablate` reruns
//! tokenize/train/eval under a named variant. Exit codes: 0 ok, 2 config
//! error, 3 data error, 4 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sidrec_core::combinatorics::count_signals;
use sidrec_core::config::{RunConfig, TokenizeMethod};
use sidrec_core::dataset::{
    leave_last_out, load_log, sliding_window_expand, test_instances, valid_instances, LogFormat,
};
use sidrec_core::error::{Error, Result};
use sidrec_core::evaluate::{catalog_sids, decode_filtered, evaluate_instances, render_report};
use sidrec_core::io::{
    atomic_write, read_checkpoint, read_checkpoint_config, read_embeddings, read_sid_map,
    write_checkpoint, write_codebooks, write_embeddings, write_log_jsonl, write_log_tsv,
    write_rq_codebooks, write_sid_map,
};
use sidrec_core::network::ModelParams;
use sidrec_core::synth;
use sidrec_core::tokenizer::{
    build_report, fit_pse, fit_rq_kmeans, random_tokenize, rq_tokenize, tokenize,
};
use sidrec_core::train::train;

#[derive(Parser)]
#[command(
    name = "sidrec",
    version,
    about = "Semantic-ID generative recommendation pipeline"
)]
struct Cli {
    /// Flat key=value config file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key after the file is read (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding table and interaction log.
    Synth {
        #[arg(long, default_value_t = 50)]
        users: usize,
        #[arg(long, default_value_t = 40)]
        items: usize,
    },
    /// Fit codebooks and assign a semantic id to every item.
    Tokenize,
    /// Train the masked-diffusion model and keep the best checkpoint.
    Train,
    /// Score held-out targets with a trained checkpoint.
    Eval {
        /// Which held-out target to score: valid or test.
        #[arg(long, default_value = "valid")]
        split: String,
        /// Rank over raw beam output instead of catalog-filtered candidates.
        #[arg(long)]
        no_filter: bool,
    },
    /// Print Top-K recommendations for one user from the log.
    Decode {
        #[arg(long)]
        user: String,
        /// Candidate count; defaults to the config's k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Print the masked-digit supervision census for n digits.
    CountSignals { n: u32 },
    /// Rerun tokenize/train/eval under a named variant: a noising strategy
    /// (ocn-ls, ocn-lr, ocn-ms, ocn-mr, random, coherent-<k>) or a tokenizer
    /// (sid-pse, sid-rq, sid-random).
    Ablate { variant: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Synth { users, items } => cmd_synth(&cfg, users, items),
        Command::Tokenize => cmd_tokenize(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval { split, no_filter } => cmd_eval(&cfg, &split, no_filter),
        Command::Decode { user, k } => cmd_decode(&cfg, &user, k),
        Command::CountSignals { n } => cmd_count_signals(n),
        Command::Ablate { variant } => cmd_ablate(&cfg, &variant),
    }
}

/// File values override defaults, --set overrides the file; the result is
/// validated before any command runs.
fn effective_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in sets {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_synth(cfg: &RunConfig, users: usize, items: usize) -> Result<()> {
    let (table, log) = synth::generate(users, items, cfg.seed)?;
    write_embeddings(Path::new(&cfg.embeddings_path), &table)?;
    match cfg.log_format {
        LogFormat::Tsv => write_log_tsv(Path::new(&cfg.log_path), &log)?,
        LogFormat::Jsonl => write_log_jsonl(Path::new(&cfg.log_path), &log)?,
    }
    println!(
        "wrote {} item embeddings to {} and {} interactions to {}",
        table.len(),
        cfg.embeddings_path,
        log.records.len(),
        cfg.log_path
    );
    Ok(())
}

fn cmd_tokenize(cfg: &RunConfig) -> Result<()> {
    let table = read_embeddings(Path::new(&cfg.embeddings_path))?;
    let (map, report) = match cfg.tok_method {
        TokenizeMethod::Pse => {
            let fit = fit_pse(&table.vectors, cfg.n, cfg.m, cfg.tok_iters, cfg.tok_seed)?;
            write_codebooks(Path::new(&cfg.codebooks_path), &fit.codebooks)?;
            let map = tokenize(&table.ids, &table.vectors, &fit.codebooks)?;
            let cbs = fit.codebooks;
            let report = build_report(
                Some(&table.vectors),
                &map,
                cfg.n,
                cfg.m,
                Some(&|sid| cbs.reconstruct(sid)),
            );
            (map, report)
        }
        TokenizeMethod::Rq => {
            let cbs = fit_rq_kmeans(&table.vectors, cfg.n, cfg.m, cfg.tok_iters, cfg.tok_seed)?;
            write_rq_codebooks(Path::new(&cfg.codebooks_path), &cbs)?;
            let map = rq_tokenize(&table.ids, &table.vectors, &cbs)?;
            let report = build_report(
                Some(&table.vectors),
                &map,
                cfg.n,
                cfg.m,
                Some(&|sid| cbs.reconstruct(sid)),
            );
            (map, report)
        }
        TokenizeMethod::Random => {
            let map = random_tokenize(&table.ids, cfg.n, cfg.m, cfg.tok_seed)?;
            (map.clone(), build_report(None, &map, cfg.n, cfg.m, None))
        }
    };
    write_sid_map(Path::new(&cfg.sid_map_path), &map)?;
    print!("{report}");
    println!(
        "wrote sid map for {} items to {}",
        map.len(),
        cfg.sid_map_path
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let log = load_log(Path::new(&cfg.log_path), cfg.log_format)?;
    let map = read_sid_map(Path::new(&cfg.sid_map_path), cfg.m)?;
    let split = leave_last_out(&log);
    println!("{}", split.summary());
    let train_set = sliding_window_expand(&split, &map, cfg.l_input)?;
    let valid_set = valid_instances(&split, &map, cfg.l_input)?;
    let catalog = catalog_sids(&map);
    let (params, trace) = train(&train_set, &valid_set, &catalog, cfg)?;
    write_checkpoint(Path::new(&cfg.checkpoint_path), &cfg.to_text(), &params)?;
    println!("{trace}");
    println!("wrote checkpoint to {}", cfg.checkpoint_path);
    Ok(())
}

/// Loads checkpoint tensors after proving the stored config describes the
/// same model shape the caller asked for.
fn load_checkpoint(cfg: &RunConfig) -> Result<ModelParams> {
    let path = Path::new(&cfg.checkpoint_path);
    let stored = RunConfig::parse(&read_checkpoint_config(path)?)?;
    if stored.model_config() != cfg.model_config() {
        return Err(Error::Config(format!(
            "checkpoint {} holds a different model shape; rerun with its config",
            cfg.checkpoint_path
        )));
    }
    let (_, params) = read_checkpoint(path, &cfg.model_config())?;
    Ok(params)
}

fn cmd_eval(cfg: &RunConfig, split_name: &str, no_filter: bool) -> Result<()> {
    let params = load_checkpoint(cfg)?;
    let log = load_log(Path::new(&cfg.log_path), cfg.log_format)?;
    let map = read_sid_map(Path::new(&cfg.sid_map_path), cfg.m)?;
    let split = leave_last_out(&log);
    let instances = match split_name {
        "valid" => valid_instances(&split, &map, cfg.l_input)?,
        "test" => test_instances(&split, &map, cfg.l_input)?,
        other => {
            return Err(Error::Config(format!(
                "unknown split {other:?} (expected valid or test)"
            )))
        }
    };
    let catalog = catalog_sids(&map);
    let filter = if no_filter { None } else { Some(&catalog) };
    let outcome = evaluate_instances(
        &instances,
        &params,
        &cfg.model_config(),
        cfg.b_act,
        cfg.k,
        filter,
    )?;
    let report = render_report(split_name, !no_filter, &outcome);
    print!("{report}");
    if !cfg.report_path.is_empty() {
        let full = format!("{report}\n# effective config\n{}", cfg.to_text());
        atomic_write(Path::new(&cfg.report_path), full.as_bytes())?;
        println!("wrote report to {}", cfg.report_path);
    }
    Ok(())
}

fn cmd_decode(cfg: &RunConfig, user: &str, k_flag: Option<usize>) -> Result<()> {
    let params = load_checkpoint(cfg)?;
    let log = load_log(Path::new(&cfg.log_path), cfg.log_format)?;
    let map = read_sid_map(Path::new(&cfg.sid_map_path), cfg.m)?;
    let k = k_flag.unwrap_or(cfg.k);

    let sequences = log.user_sequences();
    let history = sequences
        .iter()
        .find(|(u, _)| u == user)
        .map(|(_, items)| items)
        .ok_or_else(|| Error::Data(format!("user {user:?} not present in the log")))?;
    let mut context = Vec::with_capacity(history.len());
    for id in history {
        let sid = map
            .get(id)
            .ok_or_else(|| Error::Data(format!("item {id:?} missing from the sid map")))?;
        context.push(sid.clone());
    }
    let start = context.len().saturating_sub(cfg.l_input);

    let catalog = catalog_sids(&map);
    let candidates = decode_filtered(
        &context[start..],
        &params,
        &cfg.model_config(),
        cfg.b_act,
        k,
        Some(&catalog),
    )?;
    let groups = map.by_sid();
    for (rank, (sid, score)) in candidates.iter().enumerate() {
        let items = groups.get(sid).map(|ids| ids.join(",")).unwrap_or_default();
        println!("{}\t{score:.6}\t{sid}\t{items}", rank + 1);
    }
    Ok(())
}

fn cmd_count_signals(n: u32) -> Result<()> {
    let census = count_signals(n)?;
    println!(
        "signals={} min_samples={}",
        census.mdm_signals, census.min_samples_mdm
    );
    Ok(())
}

/// A variant is a config override: tokenizer variants rerun tokenize with a
/// different method, everything else parses as a noising strategy. Artifacts
/// go to suffixed paths so the main run stays untouched.
fn cmd_ablate(cfg: &RunConfig, variant: &str) -> Result<()> {
    let mut run = cfg.clone();
    match variant {
        "sid-pse" => run.set("tok_method", "pse")?,
        "sid-rq" => run.set("tok_method", "rq")?,
        "sid-random" => run.set("tok_method", "random")?,
        other => run.set("strategy", other)?,
    }
    run.codebooks_path = format!("{}.{variant}", cfg.codebooks_path);
    run.sid_map_path = format!("{}.{variant}", cfg.sid_map_path);
    run.checkpoint_path = format!("{}.{variant}", cfg.checkpoint_path);
    if !cfg.report_path.is_empty() {
        run.report_path = format!("{}.{variant}", cfg.report_path);
    }
    println!("variant={variant}");
    cmd_tokenize(&run)?;
    cmd_train(&run)?;
    cmd_eval(&run, "valid", false)
}
