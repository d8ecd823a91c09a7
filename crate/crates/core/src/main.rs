use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use resdisc::config::{load_scenario, Profile, ScenarioFile};
use resdisc::lwe::{keygen, wire, Ciphertext, RngStream};
use resdisc::par::Parallelism;
use resdisc::sim::{opening_ciphertexts, prepare_scenario, run_scenario, write_csv, TraceSummary};
use resdisc::verify::{run_all, VerifyOptions};
use resdisc::Error;

#[derive(Parser)]
#[command(name = "resdisc", version, about = "Encrypted control loop with residue disclosure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// CSV output; stdout gets only the summary.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t)]
        profile: Profile,
        /// Also write the first ciphertexts (x0.ct, y0.ct, y0_conventional.ct) here.
        #[arg(long)]
        ciphertexts: Option<PathBuf>,
        /// Also write the scaled controller parameters as TOML here.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Run the randomized property suites.
    Verify {
        #[arg(long, value_enum, default_value_t)]
        profile: Profile,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Add a deliberately failing property.
        #[arg(long)]
        canary: bool,
        #[arg(long)]
        sequential: bool,
    },
    /// Generate a secret key as JSON.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t)]
        profile: Profile,
        /// Take q, dimension and sigma from this scenario's [crypto] section.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Describe a binary ciphertext file.
    Inspect { file: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ModulusTooSmall { .. } => 2,
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::ObservabilityFailure(_)
        | Error::DimensionMismatch(_)
        | Error::NotPrime(_)
        | Error::ModulusOutOfRange(_) => 3,
        _ => 1,
    }
}

fn create(path: &Path) -> resdisc::Result<File> {
    File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn print_summary(s: &TraceSummary) {
    println!("horizon = {}", s.horizon);
    println!("q = {}", s.q);
    println!("dimension = {}", s.dimension);
    println!("sigma = {}", s.sigma);
    println!(
        "scales = r {:e}, s_inv {}, l_inv {}",
        s.scales.r, s.scales.s_inv, s.scales.l_inv
    );
    println!("theta = {:e}", s.theta);
    println!("max_residue_gap = {:e}", s.max_residue_gap);
    println!("max_input_gap = {:e}", s.max_input_gap);
    println!("alarms = {}", s.alarms);
    if let Some(m) = s.attack_magnitude {
        println!("attack_magnitude = {m:e}");
        println!("false_alarms = {}", s.false_alarms);
        match s.detection_delay {
            Some(d) => println!("detection_delay = {d}"),
            None => println!("detection_delay = none"),
        }
    }
    println!("state_encryptions = {}", s.state_encryptions);
}

fn cmd_run(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    profile: Profile,
    ciphertexts: Option<&Path>,
    params: Option<&Path>,
) -> resdisc::Result<()> {
    let cfg = load_scenario(config, profile, seed)?;
    let trace = run_scenario(&cfg)?;
    write_csv(&trace, BufWriter::new(create(out)?))?;
    if let Some(dir) = ciphertexts {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let cts = opening_ciphertexts(&cfg)?;
        for (name, ct) in [
            ("x0.ct", &cts.initial_state),
            ("y0.ct", &cts.measurement),
            ("y0_conventional.ct", &cts.measurement_conventional),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, wire::encode(ct)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        }
    }
    if let Some(path) = params {
        let text = toml::to_string(&prepare_scenario(&cfg)?.params).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    print_summary(&trace.summary);
    Ok(())
}

fn cmd_verify(opts: VerifyOptions) -> ExitCode {
    if opts.trials == 0 {
        eprintln!("warning: --trials 0 runs no trials; every property passes vacuously");
    }
    let reports = run_all(&opts);
    for r in &reports {
        if r.passed() {
            println!("PASS {} ({} trials)", r.name, r.trials);
        } else {
            println!("FAIL {} ({} of {} trials)", r.name, r.failures, r.trials);
            if let Some(f) = &r.first_failure {
                println!("     first failure: {f}");
            }
        }
    }
    if reports.iter().all(|r| r.passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_keygen(out: &Path, seed: u64, profile: Profile, config: Option<&Path>) -> resdisc::Result<()> {
    let crypto = match config {
        Some(path) => ScenarioFile::load(path)?.resolve(profile, Some(seed))?.crypto,
        None => {
            ScenarioFile::parse(include_str!("../fixtures/demo.toml"))?
                .resolve(profile, Some(seed))?
                .crypto
        }
    };
    let sk = keygen(
        crypto.dimension,
        crypto.q,
        crypto.sigma,
        &mut RngStream::derive(seed, 0),
    )?;
    let json = serde_json::to_string_pretty(&sk.to_file()).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(out, json + "\n").map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    println!(
        "wrote {} (q = {}, N = {}, sigma = {})",
        out.display(),
        crypto.q,
        crypto.dimension,
        crypto.sigma
    );
    Ok(())
}

fn format_column(ct: &Ciphertext, col: &resdisc::ZqMatrix) -> String {
    let q = ct.modulus();
    let vals: Vec<String> = (0..col.rows()).map(|i| q.lift(col.get(i, 0)).to_string()).collect();
    format!("[{}]", vals.join(", "))
}

fn cmd_inspect(file: &Path) -> resdisc::Result<()> {
    let bytes = std::fs::read(file).map_err(|e| Error::Io(format!("{}: {e}", file.display())))?;
    let ct = wire::decode(&bytes)?;
    println!("kind = {}", ct.kind().name());
    println!("q = {}", ct.modulus());
    println!("dimension = {}", ct.dim());
    println!("rows = {}", ct.rows());
    println!("width = {}", ct.width());
    match ct.disclosed_column() {
        Some(col) => println!("disclosed column = {}", format_column(&ct, &col)),
        None => println!("no disclosed column"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            profile,
            ciphertexts,
            params,
        } => cmd_run(&config, &out, seed, profile, ciphertexts.as_deref(), params.as_deref()),
        Command::Verify {
            profile,
            seed,
            trials,
            canary,
            sequential,
        } => {
            return cmd_verify(VerifyOptions {
                seed,
                trials,
                profile,
                parallelism: if sequential {
                    Parallelism::Sequential
                } else {
                    Parallelism::Parallel
                },
                canary,
            })
        }
        Command::Keygen {
            out,
            seed,
            profile,
            config,
        } => cmd_keygen(&out, seed, profile, config.as_deref()),
        Command::Inspect { file } => cmd_inspect(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
