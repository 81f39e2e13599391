//! CSV and plain-text table output.

use std::io::{self, Write};

use cfsim_core::ParticleTable;

/// Formats a value for output: shortest round-trip decimal, `NA` for missing.
pub fn fmt_value(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), fmt_value)
}

/// Writes the table as RFC 4180 CSV with a header row.
pub fn write_csv<W: Write>(t: &ParticleTable, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    w.write_record(t.names())?;
    let mut record = Vec::with_capacity(t.n_columns());
    for i in 0..t.n_rows() {
        record.clear();
        record.extend(t.columns().iter().map(|c| fmt_value(c[i])));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and rows of already formatted cells as CSV.
pub fn write_rows<W: Write>(header: &[&str], rows: &[Vec<String>], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and rows as right-aligned text columns.
pub fn write_text<W: Write>(header: &[&str], rows: &[Vec<String>], mut out: W) -> io::Result<()> {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        cells
            .zip(&widths)
            .map(|(c, &w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(&mut header.iter().copied()))?;
    for r in rows {
        writeln!(out, "{}", line(&mut r.iter().map(String::as_str)))?;
    }
    Ok(())
}

/// Rounds for display to `digits` significant decimals after the point.
pub fn fixed(x: f64, digits: usize) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:.digits$}")
    }
}
