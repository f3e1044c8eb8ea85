//! Command-line front end. Exit status: 0 success, 1 usage error, 2 runtime failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use rsma_core::datagen::{
    generate, label_records, read_dataset, substream_seed, write_dataset, DatasetFile,
};
use rsma_core::harness::{asr, bench, evaluate, evaluate_pgd, ood_transform, Relabel, Scenario};
use rsma_core::model::{wsr, SystemConfig};
use rsma_core::solver::{solve_fp_oracle, solve_pgd, SolverOptions, StepSizes};
use rsma_core::unfold::{
    init_params, train, GradMode, InitScheme, NetworkParams, Sample, TrainConfig, TrainRecord,
};

#[derive(Parser)]
#[command(name = "rsma", version, about = "RSMA weighted-sum-rate beamforming: FP oracle, PGD and deep unfolding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverKind {
    Fp,
    Pgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSolver {
    Du,
    Pgd,
    Fp,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Small,
    Pgd,
}

#[derive(clap::Args)]
struct OracleArgs {
    /// Oracle restarts per record.
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    /// Oracle stopping tolerance on the WSR change.
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
}

impl OracleArgs {
    fn options(&self, num_users: usize) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            ..SolverOptions::oracle(num_users, 0)
        }
    }
}

#[derive(clap::Args)]
struct PgdArgs {
    /// Penalty factor.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Step size for every variable.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 0.999)]
    step_decay: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
}

impl PgdArgs {
    fn options(&self, num_users: usize) -> SolverOptions {
        SolverOptions {
            lambda: self.lambda,
            steps: StepSizes::uniform(num_users, self.step),
            step_decay: self.step_decay,
            max_iters: self.max_iters,
            ..SolverOptions::pgd(num_users, 0)
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample unlabeled instances.
    GenData {
        /// JSON system configuration; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every record with the FP oracle.
    Label {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve records with the FP oracle or PGD; writes one CSV row per record.
    Solve {
        #[arg(long, value_enum)]
        solver: SolverKind,
        #[arg(long)]
        data: PathBuf,
        /// Solve only this record.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        pgd: PgdArgs,
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration trace of the solved record (requires --index).
        #[arg(long, requires = "index")]
        trace: Option<PathBuf>,
    },
    /// Train the unfolded network on a labeled dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        layers: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0.003)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, value_enum, default_value_t = InitKind::Small)]
        init: InitKind,
        /// Step size reproduced by `--init pgd`.
        #[arg(long, default_value_t = 1e-2)]
        init_step: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Treat the auxiliary updates as constants during backpropagation.
        #[arg(long)]
        no_z_backprop: bool,
        /// Use central differences instead of reverse accumulation.
        #[arg(long)]
        finite_diff: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// ASR of a solver against the dataset labels.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalSolver::Du)]
        solver: EvalSolver,
        #[arg(long, required_if_eq("solver", "du"))]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        pgd: PgdArgs,
        #[command(flatten)]
        oracle: OracleArgs,
        /// Per-sample ratios (and per-layer ASR for `du`) as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Out-of-distribution test: transform, relabel, evaluate.
    Ood {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// snr+N, snr-N (dB) or pmax+N, pmax-N (dBm).
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        oracle: OracleArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the transformed, relabeled dataset.
        #[arg(long)]
        dataset_out: Option<PathBuf>,
    },
    /// Time the network against the FP oracle.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Flatten trained parameters to CSV.
    ExportParams {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn load(path: &Path) -> Result<DatasetFile> {
    read_dataset(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn load_params(path: &Path) -> Result<NetworkParams> {
    NetworkParams::load(path).with_context(|| format!("cannot read parameters {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, n, seed, out } => {
            let config: SystemConfig = match config {
                Some(p) => serde_json::from_str(
                    &std::fs::read_to_string(&p)
                        .with_context(|| format!("cannot read {}", p.display()))?,
                )
                .with_context(|| format!("invalid config {}", p.display()))?,
                None => SystemConfig::default(),
            };
            let records = generate(&config, seed, n)?;
            write_dataset(&out, &DatasetFile::new(config, seed, records))?;
            println!("wrote {n} records to {}", out.display());
        }
        Command::Label { data, seed, oracle, out } => {
            let file = load(&data)?;
            let opts = oracle.options(file.header.config.num_users);
            let records = label_records(&file.records, &opts, seed, oracle.restarts)?;
            let labeled = DatasetFile {
                records,
                ..file
            };
            write_dataset(&out, &labeled)?;
            println!("labeled {} records", labeled.records.len());
        }
        Command::Solve { solver, data, index, seed, pgd, tol, out, trace } => {
            let file = load(&data)?;
            let u = file.header.config.num_users;
            let indices: Vec<usize> = match index {
                Some(i) if i >= file.records.len() => {
                    bail!("index {i} out of range ({} records)", file.records.len())
                }
                Some(i) => vec![i],
                None => (0..file.records.len()).collect(),
            };
            let mut w = create(&out)?;
            writeln!(w, "index,wsr,iterations,converged")?;
            for i in indices {
                let inst = &file.records[i].instance;
                let s = substream_seed(seed, i as u64);
                let (beams, rc, tr) = match solver {
                    SolverKind::Fp => {
                        let o = SolverOptions { seed: s, tol, ..SolverOptions::oracle(u, s) };
                        solve_fp_oracle(inst, &o, None)
                    }
                    SolverKind::Pgd => {
                        let o = SolverOptions { seed: s, ..pgd.options(u) };
                        solve_pgd(inst, &o, None)
                    }
                }
                .with_context(|| format!("record {i}"))?;
                writeln!(w, "{i},{},{},{}", wsr(inst, &beams, &rc)?, tr.iterations_used, tr.converged)?;
                if let Some(p) = &trace {
                    tr.write_csv(create(p)?)?;
                }
            }
            w.flush()?;
        }
        Command::Train {
            data,
            seed,
            layers,
            epochs,
            lr,
            batch_size,
            init,
            init_step,
            lambda,
            no_z_backprop,
            finite_diff,
            out,
            history,
        } => {
            let file = load(&data)?;
            let u = file.header.config.num_users;
            if layers == 0 {
                bail!("--layers must be positive");
            }
            let scheme = match init {
                InitKind::Small => InitScheme::RandomSmall,
                InitKind::Pgd => InitScheme::PgdMimic {
                    steps: StepSizes::uniform(u, init_step),
                    decay: 1.0,
                },
            };
            let params = init_params(u, layers, lambda, seed, &scheme);
            let samples = Sample::from_records(&file.records, seed)?;
            let config = TrainConfig {
                learning_rate: lr,
                batch_size,
                epochs,
                seed,
                grad_mode: if finite_diff { GradMode::FiniteDiff } else { GradMode::Reverse },
                z_backprop: !no_z_backprop,
            };
            let (trained, hist) = train(&samples, &params, &config)?;
            trained.save(&out)?;
            if let Some(p) = history {
                let mut w = create(&p)?;
                TrainRecord::write_csv(&hist, &mut w)?;
                w.flush()?;
            }
            if let Some(last) = hist.last() {
                println!("epoch {} mean_loss {:.6} train_asr {:.4}", last.epoch, last.mean_loss, last.train_asr);
            }
        }
        Command::Eval { data, solver, params, seed, pgd, oracle, out } => {
            let file = load(&data)?;
            let u = file.header.config.num_users;
            let (metrics, per_layer) = match solver {
                EvalSolver::Du => {
                    let p = load_params(params.as_deref().expect("required by clap"))?;
                    let e = evaluate(&file.records, &p, seed)?;
                    (e.metrics, Some(e.per_layer_asr))
                }
                EvalSolver::Pgd => (evaluate_pgd(&file.records, &pgd.options(u), seed)?, None),
                EvalSolver::Fp => {
                    let relabeled =
                        label_records(&file.records, &oracle.options(u), seed, oracle.restarts)?;
                    let hats: Vec<f64> = relabeled.iter().map(|r| r.wsr_star.unwrap_or(0.0)).collect();
                    let stars: Vec<f64> = file
                        .records
                        .iter()
                        .enumerate()
                        .map(|(i, r)| r.label(i))
                        .collect::<Result<_, _>>()?;
                    (asr(&hats, &stars)?, None)
                }
            };
            println!("ASR {:.4}", metrics.asr);
            if let Some(p) = out {
                let mut w = create(&p)?;
                writeln!(w, "index,ratio")?;
                for (i, r) in metrics.per_sample_ratio.iter().enumerate() {
                    writeln!(w, "{i},{r}")?;
                }
                if let Some(layers) = per_layer {
                    let mut lw = create(&p.with_extension("layers.csv"))?;
                    writeln!(lw, "layer,asr")?;
                    for (n, a) in layers.iter().enumerate() {
                        writeln!(lw, "{},{a}", n + 1)?;
                    }
                    lw.flush()?;
                }
                w.flush()?;
            }
        }
        Command::Ood { data, params, scenario, seed, oracle, out, dataset_out } => {
            let scenario: Scenario = scenario.parse()?;
            let file = load(&data)?;
            let p = load_params(&params)?;
            let relabel = Relabel {
                opts: oracle.options(file.header.config.num_users),
                seed,
                restarts: oracle.restarts,
            };
            let shifted = ood_transform(&file, scenario, &relabel)?;
            let base = evaluate(&file.records, &p, seed)?.metrics.asr;
            let moved = evaluate(&shifted.records, &p, seed)?.metrics.asr;
            let mut w = create(&out)?;
            writeln!(w, "scenario,asr_in,asr_ood,drop_pp")?;
            writeln!(w, "{scenario},{base},{moved},{}", 100.0 * (base - moved))?;
            w.flush()?;
            if let Some(d) = dataset_out {
                write_dataset(&d, &shifted)?;
            }
            println!("{scenario}: ASR {base:.4} -> {moved:.4}");
        }
        Command::Bench { data, params, seed, reps, tol, out_dir } => {
            let file = load(&data)?;
            let p = load_params(&params)?;
            let u = file.header.config.num_users;
            let opts = SolverOptions { tol, ..SolverOptions::oracle(u, seed) };
            let stats = bench(&file.records, &p, &opts, reps, seed)?;
            std::fs::create_dir_all(&out_dir)?;
            stats.du.write_cdf_csv(create(&out_dir.join("du_cdf.csv"))?)?;
            stats.fp.write_cdf_csv(create(&out_dir.join("fp_cdf.csv"))?)?;
            let mut w = create(&out_dir.join("summary.csv"))?;
            writeln!(w, "solver,mean_s,median_s,p95_s")?;
            for (name, t) in [("du", &stats.du), ("fp", &stats.fp)] {
                let s = t.summary();
                writeln!(w, "{name},{:e},{:e},{:e}", s.mean, s.median, s.p95)?;
                println!("{name}: median {:.3e} s, p95 {:.3e} s", s.median, s.p95);
            }
            w.flush()?;
        }
        Command::ExportParams { params, out } => {
            let p = load_params(&params)?;
            let mut w = create(&out)?;
            writeln!(w, "layer,block,row,col,value")?;
            for (n, l) in p.layers.iter().enumerate() {
                for (c, x) in l.w0.iter().enumerate() {
                    writeln!(w, "{},w0,0,{c},{x}", n + 1)?;
                }
                for (block, rows) in [("w", &l.w), ("eta", &l.eta)] {
                    for (r, row) in rows.iter().enumerate() {
                        for (c, x) in row.iter().enumerate() {
                            writeln!(w, "{},{block},{r},{c},{x}", n + 1)?;
                        }
                    }
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
