//! CSV output. Floats use nine significant digits in `%g` style.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::harness::{CellResult, ComparisonRow, ValidationBlock};

const SIG: usize = 9;

/// Formats like C's `%.9g`: shortest of fixed or scientific, trailing zeros
/// dropped; `nan`/`inf` for non-finite values.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG - 1, x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if exp < -4 || exp >= SIG as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (SIG as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `block_id,step,hypothesis_index,posterior`, one row per step and tracked hypothesis.
pub fn write_validation(path: &Path, blocks: &[ValidationBlock]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "block_id,step,hypothesis_index,posterior")?;
    for b in blocks {
        for (step, row) in b.posteriors.iter().enumerate() {
            for (k, &m) in b.hypotheses.iter().enumerate() {
                writeln!(w, "{},{},{},{}", b.block_id, step + 1, m, fmt_sig(row[k]))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-episode test metrics for any number of cells.
pub fn write_metrics(path: &Path, cells: &[&CellResult]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "policy,pi_up,pi_low,episode,claim_delay,correct,false_alarms,truncated,truth,claimed,change_reported"
    )?;
    for c in cells {
        let s = &c.summary;
        for (e, ep) in c.episodes.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.policy.name(),
                fmt_sig(s.pi_up),
                fmt_sig(s.pi_low),
                e,
                opt(ep.claim_delay),
                opt(ep.correct()),
                ep.false_alarms,
                ep.truncated,
                ep.truth,
                opt(ep.accepted),
                opt(ep.change_reported),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One summary row per cell.
pub fn write_grid(path: &Path, cells: &[&CellResult]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "pi_up,pi_low,mean_delay,mean_loss,n,policy,claims,delay_stderr,no_claim_rate,false_alarm_rate"
    )?;
    for c in cells {
        let s = &c.summary;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_sig(s.pi_up),
            fmt_sig(s.pi_low),
            fmt_sig(s.mean_delay),
            fmt_sig(s.loss),
            s.episodes,
            c.policy.name(),
            s.claims,
            fmt_sig(s.delay_stderr),
            fmt_sig(s.no_claim_rate),
            fmt_sig(s.false_alarm_rate),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Agent and Chernoff side by side at each upper threshold.
pub fn write_compare(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "pi_up,pi_low,agent_mean_delay,agent_loss,agent_no_claim_rate,chernoff_mean_delay,chernoff_loss,chernoff_no_claim_rate,n"
    )?;
    for r in rows {
        let (a, c) = (&r.agent.summary, &r.chernoff.summary);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt_sig(a.pi_up),
            fmt_sig(a.pi_low),
            fmt_sig(a.mean_delay),
            fmt_sig(a.loss),
            fmt_sig(a.no_claim_rate),
            fmt_sig(c.mean_delay),
            fmt_sig(c.loss),
            fmt_sig(c.no_claim_rate),
            a.episodes,
        )?;
    }
    w.flush()?;
    Ok(())
}
