//! Comma-separated tables and their plain-text rendering.

use std::fmt::Write as _;
use std::path::Path;

use latclass_core::inference::LatentRow;
use latclass_core::synth::Truth;
use latclass_core::{Dataset, FitTrace, PosteriorTable};

use crate::dataset_io::csv_err;
use crate::error::{Error, Result};
use crate::params_io::fmt_f64;

/// A rectangular table of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(&self.header).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_owned).collect()).map_err(|e| csv_err(path, e)))
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }

    /// Space-aligned columns, numbers right-aligned.
    pub fn render(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.header[c].len()]).max().unwrap_or(0))
            .collect();
        let numeric = |s: &str| s.parse::<f64>().is_ok();
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| if numeric(c) { format!("{c:>w$}") } else { format!("{c:<w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&self.header, &mut out);
        let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
        for r in &self.rows {
            line(r, &mut out);
        }
        out
    }
}

/// Fixed-precision cell for human-facing tables.
pub fn fixed(x: f64, digits: usize) -> String {
    if x.is_finite() {
        format!("{x:.digits$}")
    } else {
        "NA".to_owned()
    }
}

/// Round-trip cell for machine-facing tables.
pub fn exact(x: f64) -> String {
    if x.is_finite() {
        fmt_f64(x)
    } else {
        "NA".to_owned()
    }
}

/// One row per EM iteration of every restart. Wall time is left out so the
/// file is reproducible byte for byte.
pub fn trace_table(traces: &[&FitTrace]) -> Table {
    let mut t = Table::new([
        "restart",
        "seed",
        "iteration",
        "observed_ll",
        "measurement_ll",
        "total_objective",
        "expected_complete_ll",
        "choice_nonconverged",
        "joint_steps",
        "joint_grad_norm",
    ]);
    for tr in traces {
        for r in &tr.records {
            t.push(vec![
                tr.restart.to_string(),
                tr.seed.to_string(),
                r.iteration.to_string(),
                exact(r.observed_ll),
                exact(r.measurement_ll),
                exact(r.total_objective),
                r.expected_complete_ll.map_or_else(String::new, exact),
                r.choice_nonconverged.to_string(),
                r.joint_steps.to_string(),
                exact(r.joint_grad_norm),
            ]);
        }
    }
    t
}

pub fn posterior_table(d: &Dataset, post: &PosteriorTable) -> Table {
    let k = post.n_classes();
    let mut t = Table::new(std::iter::once("id".to_owned()).chain((1..=k).map(|c| format!("p_class{c}"))).chain(["modal_class".to_owned()]));
    let modal = post.modal_classes();
    for (n, ind) in d.individuals.iter().enumerate() {
        let mut row = vec![ind.id.to_string()];
        row.extend(post.row(n).iter().map(|&p| exact(p)));
        row.push((modal[n] + 1).to_string());
        t.push(row);
    }
    t
}

pub fn latent_table(d: &Dataset, rows: &[LatentRow]) -> Table {
    let z = rows.first().map_or(0, |r| r.r.len());
    let mut header = vec!["id".to_owned()];
    header.extend((1..=z).map(|i| format!("r_{i}")));
    header.extend(["omega".to_owned(), "omega_fallback".to_owned()]);
    header.extend(column_names(&d.socio_names, d.n_socio(), "s"));
    header.extend(column_names(&d.indicator_texts, d.n_indicators(), "").into_iter().map(|t| format!("ind_{t}")));
    let mut t = Table::new(header);
    for r in rows {
        let mut row = vec![r.id.to_string()];
        row.extend(r.r.iter().map(|&v| exact(v)));
        row.push(exact(r.omega));
        row.push(u8::from(r.omega_fallback).to_string());
        row.extend(r.socio.iter().map(|&v| exact(v)));
        match &r.indicators {
            Some(ind) => row.extend(ind.iter().map(u8::to_string)),
            None => row.extend(std::iter::repeat(String::new()).take(d.n_indicators())),
        }
        t.push(row);
    }
    t
}

/// Generating class (1-based), latent variables and individual effect.
pub fn truth_table(d: &Dataset, truth: &Truth) -> Table {
    let z = truth.r.first().map_or(0, Vec::len);
    let mut header = vec!["id".to_owned(), "class".to_owned()];
    header.extend((1..=z).map(|i| format!("r_{i}")));
    header.push("omega".to_owned());
    let mut t = Table::new(header);
    for (n, ind) in d.individuals.iter().enumerate() {
        let mut row = vec![ind.id.to_string(), (truth.class[n] + 1).to_string()];
        row.extend(truth.r[n].iter().map(|&v| exact(v)));
        row.push(exact(truth.omega[n]));
        t.push(row);
    }
    t
}

/// Reads the generating classes (0-based) back from a truth file.
pub fn read_truth_classes(path: &Path) -> Result<Vec<(usize, usize)>> {
    let t = Table::read_csv(path)?;
    let bad = |m: &str| Error::Format { path: path.to_path_buf(), message: m.to_owned() };
    if t.header.get(..2) != Some(&["id".to_owned(), "class".to_owned()][..]) {
        return Err(bad("truth file must start with `id,class`"));
    }
    t.rows
        .iter()
        .map(|r| {
            let id = r[0].parse().map_err(|_| bad("bad id"))?;
            let c: usize = r[1].parse().map_err(|_| bad("bad class"))?;
            c.checked_sub(1).map(|c| (id, c)).ok_or_else(|| bad("classes are 1-based"))
        })
        .collect()
}

pub(crate) fn column_names(given: &[String], n: usize, prefix: &str) -> Vec<String> {
    if given.len() == n {
        given.to_vec()
    } else {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_aligns_columns() {
        let mut t = Table::new(["name", "value"]);
        t.push(vec!["a".into(), "1.5".into()]);
        t.push(vec!["long name".into(), "-10.25".into()]);
        let s = t.render();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].ends_with("   1.5"));
        assert!(lines[3].starts_with("long name"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["x,y".into(), exact(0.1)]);
        t.write_csv(&p).unwrap();
        assert_eq!(Table::read_csv(&p).unwrap(), t);
    }
}
