//! The `oarseg` command line: dataset preparation, training, evaluation,
//! ablation sweeps, comparison tables and curve plots.

pub mod ablate;
pub mod args;
pub mod commands;
pub mod error;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Verb};
use error::{CliError, EXIT_OK, EXIT_USAGE};

/// Parses `argv` (program name first), runs the verb and returns the exit
/// code. Errors are printed to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.verb) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(verb: Verb) -> Result<(), CliError> {
    match verb {
        Verb::Prepare { common, synthetic } => {
            let s = commands::prepare(&common, synthetic)?;
            println!(
                "{}: {} patients -> train {} / val {} / test {}",
                s.dataset, s.patients, s.train, s.val, s.test
            );
            println!("classes: {}", s.classes.join(", "));
            for (shape, n) in &s.shapes {
                println!("  {shape}: {n}");
            }
        }
        Verb::Train { common } => {
            let (state, reports) = commands::train(&common)?;
            println!("run directory: {}", state.run_dir.display());
            if let Some(best) = &state.best {
                println!("best epoch {} with validation DICE {:.4}", best.epoch, best.val_dice);
            }
            for (split, report) in reports {
                println!("[{}]\n{}", split.name(), report.to_csv());
            }
        }
        Verb::Evaluate { common, checkpoint, split } => {
            print!("{}", commands::evaluate(&common, checkpoint, split.into())?.to_csv());
        }
        Verb::Ablate { kind, common, arms } => {
            let cfg = commands::load_config(&common)?;
            let root = commands::runs_root(&common);
            let outcome = ablate::run_ablation(&cfg, kind, arms.as_deref(), &root)?;
            print!("{}", outcome.ranked_csv());
        }
        Verb::Compare {
            baseline,
            enhanced,
            split,
            title,
            out,
        } => {
            let out = out.unwrap_or_else(|| PathBuf::from("."));
            print!("{}", commands::compare_runs(&baseline, &enhanced, split.into(), &title, &out)?.to_text());
        }
        Verb::Plot { runs, out } => {
            for f in plot::plot_runs(&runs, &out)?.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
