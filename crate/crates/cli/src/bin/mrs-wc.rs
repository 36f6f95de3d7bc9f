//! Word-count worker for streaming jobs.
//!
//! `mrs-wc map` emits `word\t1` for every blank-separated word of every
//! input line. `mrs-wc reduce` sums the counts of consecutive equal keys,
//! which relies on its input being sorted by key.

use std::io::{self, BufRead, BufWriter, Write};
use std::process::ExitCode;

fn is_blank(b: &u8) -> bool {
    *b == b' ' || *b == b'\t'
}

fn map(input: impl BufRead, out: &mut impl Write) -> io::Result<()> {
    for line in input.split(b'\n') {
        let line = line?;
        for word in line.split(is_blank).filter(|w| !w.is_empty()) {
            out.write_all(word)?;
            out.write_all(b"\t1\n")?;
        }
    }
    Ok(())
}

fn reduce(input: impl BufRead, out: &mut impl Write) -> io::Result<()> {
    let mut current: Option<(Vec<u8>, u64)> = None;
    for line in input.split(b'\n') {
        let line = line?;
        let (key, value) = match line.iter().position(|&b| b == b'\t') {
            Some(i) => (&line[..i], &line[i + 1..]),
            None => (&line[..], &b""[..]),
        };
        let n: u64 = std::str::from_utf8(value)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "count is not an integer"))?;
        match &mut current {
            Some((k, total)) if k.as_slice() == key => *total += n,
            _ => {
                if let Some((k, total)) = current.replace((key.to_vec(), n)) {
                    emit(out, &k, total)?;
                }
            }
        }
    }
    if let Some((k, total)) = current {
        emit(out, &k, total)?;
    }
    Ok(())
}

fn emit(out: &mut impl Write, key: &[u8], total: u64) -> io::Result<()> {
    out.write_all(key)?;
    writeln!(out, "\t{total}")
}

fn main() -> ExitCode {
    let mode = std::env::args().nth(1).unwrap_or_default();
    let stdin = io::stdin().lock();
    let mut out = BufWriter::new(io::stdout().lock());
    let result = match mode.as_str() {
        "map" => map(stdin, &mut out),
        "reduce" => reduce(stdin, &mut out),
        _ => {
            eprintln!("usage: mrs-wc map|reduce");
            return ExitCode::from(2);
        }
    };
    match result.and_then(|()| out.flush()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mrs-wc {mode}: {e}");
            ExitCode::FAILURE
        }
    }
}
