use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invshadow::experiment::{cmd_defect, cmd_orbit, cmd_probe, cmd_replay, resolve_out, ExperimentConfig};

#[derive(Parser)]
#[command(name = "invshadow", version, about = "Inverse shadowing experiments on nonsingular flows")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Orbit frames and identity checks -> frames.json
    Orbit(Common),
    /// Method defects -> defect_<d>.csv, defect_summary.json
    Defect(Common),
    /// Bounded-solution growth -> growth.csv, growth.json
    Probe(Common),
    /// Shadow replays across the d ladder -> replay.json
    Replay(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> invshadow::Result<()> {
    let common = match &cli.command {
        Cmd::Orbit(c) | Cmd::Defect(c) | Cmd::Probe(c) | Cmd::Replay(c) => c,
    };
    let mut config = ExperimentConfig::from_path(&common.config)?;
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    let out = resolve_out(&config, common.out.clone())?;
    match cli.command {
        Cmd::Orbit(_) => {
            let o = cmd_orbit(&config, &out)?;
            println!(
                "orbit {}: {} frames, flow invariance {:.3e}, projection {:.3e}",
                o.flow,
                o.frames.len(),
                o.identities.flow_invariance,
                o.identities.projection
            );
        }
        Cmd::Defect(_) => {
            let o = cmd_defect(&config, &out)?;
            for e in &o.entries {
                println!("defect {} d={:e} kappa={}: sup {:.3e}, bound {:.3e}", o.flow, e.d, o.kappa, e.sup, e.bounds.total);
            }
            if let Some(f) = &o.fit {
                println!(
                    "fit: K_lin {:.3e}, K_nonlin {:.3e}, residual {:.1}%",
                    f.k_linear,
                    f.k_nonlinear,
                    100.0 * f.max_rel_residual
                );
            }
        }
        Cmd::Probe(_) => {
            let r = cmd_probe(&config, &out)?;
            println!(
                "probe {}: {:?}, sup {:.6} at N={}, slope {:.3}",
                r.flow,
                r.verdict,
                r.limit,
                r.n_list.last().copied().unwrap_or_default(),
                r.slope
            );
        }
        Cmd::Replay(_) => {
            let o = cmd_replay(&config, &out)?;
            for run in &o.runs {
                for rep in &run.replays {
                    println!(
                        "replay {} L={} d={:e}: {:?}, sup/d {:.4}, residual {}",
                        o.flow,
                        run.l,
                        rep.d,
                        rep.shadow.status,
                        rep.shadow.sup / rep.d,
                        rep.residual.map_or("-".to_string(), |r| format!("{r:.2e}"))
                    );
                }
                match (run.k5.k5, run.k5.variation) {
                    (Some(k), Some(v)) => println!("K5 {k:.5}, variation {:.2}%", 100.0 * v),
                    (Some(k), None) => println!("K5 {k:.5}"),
                    _ => println!("K5 undetermined: no shadow found"),
                }
            }
        }
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
