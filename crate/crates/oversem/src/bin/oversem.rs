//! Thin CLI over the library: run a case, autotune, scaling study, or
//! inspect a mesh/field container.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 harness failure.

use clap::{Parser, Subcommand};
use oversem::runtime::{parse_config, run_case, scale_study, tune_case};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "oversem", version, about = "spectral element heat/flow solver with overset coupling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a case file
    Run {
        case: PathBuf,
        /// override [COMM] ranks
        #[arg(long)]
        ranks: Option<usize>,
        /// override [COMM] seed
        #[arg(long)]
        seed: Option<u64>,
        /// override [COMM] scheduler (serial|concurrent)
        #[arg(long)]
        scheduler: Option<String>,
        /// override [GENERAL] statsInterval
        #[arg(long)]
        stats_interval: Option<u64>,
        /// force a kernel variant, e.g. --force-variant localGrad=1
        #[arg(long, value_name = "OP=ID")]
        force_variant: Vec<String>,
        /// output directory for snapshots and metrics
        #[arg(long, default_value = "out")]
        output: PathBuf,
    },
    /// Autotune kernels for a case and print the report
    Tune {
        case: PathBuf,
        #[arg(long)]
        ranks: Option<usize>,
    },
    /// Strong-scaling study over a list of rank counts
    Scale {
        case: PathBuf,
        /// comma-separated rank counts, e.g. 1,2,4,8
        #[arg(long, value_name = "LIST")]
        ranks_list: String,
    },
    /// Print the header of a mesh/field container
    MeshInfo { file: PathBuf },
}

fn parse_force(spec: &str) -> oversem::Result<(String, usize)> {
    let (op, id) = spec.split_once('=').ok_or_else(|| {
        oversem::Error::Config(format!("--force-variant expects OP=ID, got '{spec}'"))
    })?;
    let id: usize = id
        .parse()
        .map_err(|_| oversem::Error::Config(format!("bad variant id in '{spec}'")))?;
    Ok((op.to_string(), id))
}

fn main_inner() -> oversem::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            case,
            ranks,
            seed,
            scheduler,
            stats_interval,
            force_variant,
            output,
        } => {
            let text = std::fs::read_to_string(&case)
                .map_err(|e| oversem::Error::Config(format!("cannot read {case:?}: {e}")))?;
            let mut cfg = parse_config(&text)?;
            if let Some(p) = ranks {
                cfg.comm.ranks = p;
            }
            if let Some(s) = seed {
                cfg.comm.seed = s;
            }
            if let Some(s) = scheduler {
                let _: oversem::comm::Scheduler = s.parse()?;
                cfg.comm.scheduler = s;
            }
            if let Some(k) = stats_interval {
                cfg.general.stats_interval = k;
            }
            let forces = force_variant
                .iter()
                .map(|s| parse_force(s))
                .collect::<oversem::Result<Vec<_>>>()?;
            let summary = run_case(&cfg, Some(&output), &forces)?;
            print!("{}", summary.log);
            Ok(())
        }
        Command::Tune { case, ranks } => {
            let text = std::fs::read_to_string(&case)
                .map_err(|e| oversem::Error::Config(format!("cannot read {case:?}: {e}")))?;
            let mut cfg = parse_config(&text)?;
            if let Some(p) = ranks {
                cfg.comm.ranks = p;
            }
            print!("{}", tune_case(&cfg)?);
            Ok(())
        }
        Command::Scale { case, ranks_list } => {
            let text = std::fs::read_to_string(&case)
                .map_err(|e| oversem::Error::Config(format!("cannot read {case:?}: {e}")))?;
            let cfg = parse_config(&text)?;
            let ranks: Vec<usize> = ranks_list
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        oversem::Error::Config(format!("bad rank count '{s}' in --ranks-list"))
                    })
                })
                .collect::<oversem::Result<_>>()?;
            let study = scale_study(&cfg, &ranks)?;
            print!("{}", study.render());
            Ok(())
        }
        Command::MeshInfo { file } => {
            let info = oversem::mesh::io::mesh_info(&file)?;
            println!("MSEM container: {file:?}");
            println!("  elements (E)     : {}", info.e_global);
            println!("  order (N)        : {}", info.order);
            println!("  written by ranks : {}", info.p_written);
            println!("  gridpoints E*N^3 : {}", info.gridpoints);
            println!(
                "  bounding box     : [{:.6}, {:.6}] x [{:.6}, {:.6}] x [{:.6}, {:.6}]",
                info.bbox.0[0],
                info.bbox.1[0],
                info.bbox.0[1],
                info.bbox.1[1],
                info.bbox.0[2],
                info.bbox.1[2]
            );
            println!("  fields           : {:?}", info.field_names);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
