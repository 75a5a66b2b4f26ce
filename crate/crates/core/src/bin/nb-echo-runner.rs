//! Protocol-conformant runner that reproduces the dummy baseline.
//!
//! Usage: nb-echo-runner [--mode MODE] [--deviate KEY=VALUE]... [--listen ADDR]

use std::io::{self, Read};
use std::net::TcpListener;
use std::process::ExitCode;

use nbench::protocol::echo::{EchoMode, EchoRunner};
use nbench::protocol::{serve, Connection};

fn parse_args() -> Result<(EchoRunner, Option<String>), String> {
    let mut runner = EchoRunner::new(EchoMode::Dummy);
    let mut listen = None;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        let mut value = || args.next().ok_or(format!("{a} needs a value"));
        match a.as_str() {
            "--mode" => runner.mode = value()?.parse()?,
            "--deviate" => {
                let kv = value()?;
                let (k, v) = kv.split_once('=').ok_or(format!("expected KEY=VALUE, got {kv}"))?;
                let v = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
                runner.deviations.insert(k.to_string(), v);
            }
            "--listen" => listen = Some(value()?),
            other => return Err(format!("unknown argument {other}")),
        }
    }
    Ok((runner, listen))
}

fn main() -> ExitCode {
    let (mut runner, listen) = match parse_args() {
        Ok(x) => x,
        Err(e) => {
            eprintln!("nb-echo-runner: {e}");
            return ExitCode::from(2);
        }
    };
    if runner.mode == EchoMode::Silent {
        let _ = io::copy(&mut io::stdin().lock(), &mut io::sink());
        return ExitCode::SUCCESS;
    }
    let mut conn = match listen {
        Some(addr) => {
            let stream = match TcpListener::bind(&addr).and_then(|l| l.accept()) {
                Ok((s, _)) => s,
                Err(e) => {
                    eprintln!("nb-echo-runner: {addr}: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let reader = stream.try_clone().expect("clone tcp stream");
            Connection::new(reader, stream, None)
        }
        None => Connection::new(Box::new(io::stdin()) as Box<dyn Read + Send>, io::stdout(), None),
    };
    if runner.mode == EchoMode::V2 {
        conn.set_version(2);
    }
    match serve(&mut runner, &mut conn) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nb-echo-runner: {e}");
            ExitCode::FAILURE
        }
    }
}
