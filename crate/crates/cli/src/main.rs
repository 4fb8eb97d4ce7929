#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

mod args;
mod commands;
mod config;
mod exit;
mod logging;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Ctx;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HEADFIT_LOG_LEVEL", "warn"))
        .format_timestamp(None)
        .init();
    // clap reports usage errors itself with status 2
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut ctx = Ctx::new(&cli)?;
    let name = command_name(&cli.command);
    ctx.event(
        "start",
        serde_json::json!({"command": name, "seed": ctx.seed, "jobs": ctx.jobs}),
    )?;
    let result = match cli.command {
        Command::EncodeDr(a) => commands::dr::encode(&mut ctx, a),
        Command::DecodeDr(a) => commands::dr::decode(&mut ctx, a),
        Command::Sample(a) => commands::sample::run(&mut ctx, a),
        Command::Fit(a) => commands::fit::run(&mut ctx, a),
        Command::Texture(a) => commands::texture::run(&mut ctx, a),
        Command::Eval(a) => commands::eval::run(&mut ctx, a),
        Command::Heatmap(a) => commands::eval::heatmap(&mut ctx, a),
        Command::Synth(a) => commands::synth::run(&mut ctx, a),
        Command::Config => {
            print!("{}", ctx.cfg.to_toml()?);
            Ok(())
        }
    };
    let status = match &result {
        Ok(()) => exit::SUCCESS,
        Err(e) => exit::code_for(e),
    };
    let error = result.as_ref().err().map(|e| format!("{e:#}"));
    ctx.event(
        "finish",
        serde_json::json!({"command": name, "status": status, "error": error}),
    )?;
    result
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::EncodeDr(_) => "encode-dr",
        Command::DecodeDr(_) => "decode-dr",
        Command::Sample(_) => "sample",
        Command::Fit(_) => "fit",
        Command::Texture(_) => "texture",
        Command::Eval(_) => "eval",
        Command::Heatmap(_) => "heatmap",
        Command::Synth(_) => "synth",
        Command::Config => "config",
    }
}
