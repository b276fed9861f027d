//! Reference approximator speaking the external protocol on stdin/stdout.
//! Used in tests and as a template for real backends.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gibbs_diag::external::{Message, PROTOCOL_VERSION};
use gibbs_diag_core::rng::chain_rng;
use gibbs_diag_core::GaussianDist;

#[derive(Debug, Parser)]
#[command(name = "gibbs-diag-backend")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Debug, Clone, Subcommand)]
enum Mode {
    /// Always answers with the given θ (zeros when none is given).
    Echo {
        #[arg(allow_negative_numbers = true)]
        theta: Vec<f64>,
    },
    /// Exact posterior for θ ~ N(0, I), y_i ~ N(θ, I), with
    /// `n = obs_dim / latent_dim` observations flattened row by row.
    ExactGaussian,
    /// Ignores y and draws a random walk from 0 with step deviation `sigma`.
    PriorRw { sigma: f64 },
    /// Like `prior-rw 0.09`, but exits without a word after `k` answers.
    DieAfter { k: usize },
}

fn draw(mode: &Mode, y: &[f64], seed: u64, d: usize) -> Vec<f64> {
    let mut rng = chain_rng(seed);
    match mode {
        Mode::Echo { theta } if theta.is_empty() => vec![0.0; d],
        Mode::Echo { theta } => theta.clone(),
        Mode::ExactGaussian => {
            let n = (y.len() / d.max(1)) as f64;
            let z = GaussianDist::standard(d).sample(&mut rng);
            (0..d)
                .map(|k| {
                    let sum: f64 = y.iter().skip(k).step_by(d).sum();
                    sum / (1.0 + n) + z[k] / (1.0 + n).sqrt()
                })
                .collect()
        }
        Mode::PriorRw { sigma } => random_walk(*sigma, d, &mut rng),
        Mode::DieAfter { .. } => random_walk(0.09, d, &mut rng),
    }
}

fn random_walk(sigma: f64, d: usize, rng: &mut dyn rand::RngCore) -> Vec<f64> {
    let z = GaussianDist::standard(d).sample(rng);
    z.iter()
        .scan(0.0, |acc, e| {
            *acc += sigma * e;
            Some(*acc)
        })
        .collect()
}

fn reply(out: &mut impl Write, msg: &Message) -> io::Result<()> {
    out.write_all(msg.to_line().as_bytes())?;
    out.flush()
}

fn serve(mode: &Mode) -> io::Result<ExitCode> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut latent_dim = 0;
    let mut answered = 0;
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: Message = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("gibbs-diag-backend: bad message: {e}");
                return Ok(ExitCode::from(2));
            }
        };
        match msg {
            Message::Hello {
                version,
                latent_dim: d,
                ..
            } => {
                if version != PROTOCOL_VERSION {
                    eprintln!("gibbs-diag-backend: unsupported protocol version {version}");
                    return Ok(ExitCode::from(2));
                }
                latent_dim = d;
                reply(
                    &mut out,
                    &Message::Ready {
                        version: PROTOCOL_VERSION,
                    },
                )?;
            }
            Message::Approximate { y, seed } => {
                if let Mode::DieAfter { k } = mode {
                    if answered >= *k {
                        return Ok(ExitCode::from(1));
                    }
                }
                let value = draw(mode, &y, seed, latent_dim);
                reply(&mut out, &Message::Theta { value })?;
                answered += 1;
            }
            Message::Bye => return Ok(ExitCode::SUCCESS),
            other => {
                eprintln!("gibbs-diag-backend: unexpected {other:?}");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match serve(&cli.mode) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gibbs-diag-backend: {e}");
            ExitCode::FAILURE
        }
    }
}
