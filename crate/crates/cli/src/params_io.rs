//! Versioned text format for fitted parameter sets.
//!
//! ```text
//! latclass-params 1
//! spec_hash 9f1c0a5e7b2d4410
//! classes 2
//! attributes 4
//! covariates 3
//! membership_columns all
//! network_inputs 3
//! network_columns all
//! hidden 8
//! latent 2
//! omega on zero
//! measurement on
//!
//! section choice.beta 2 4
//! 0.52 -1.3 0.0 2.25
//! ...
//! end
//! ```
//!
//! Every `section <name> <rows> <cols>` is followed by `rows` lines of
//! `cols` whitespace-separated numbers. `measurement.log_gaps` is ragged
//! (`cols` is `*`): row `p` holds `L_p - 2` values. Numbers are written in
//! the shortest form that parses back to the identical `f64`. Lines
//! starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use latclass_core::choice::ChoiceParams;
use latclass_core::latent_net::{LatentNetWeights, OmegaFallback, OmegaWeights};
use latclass_core::measurement::MeasurementParams;
use latclass_core::membership::MembershipParams;
use latclass_core::ParameterSet;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "latclass-params";

/// Shortest round-trip rendering; exponent form for very small or large
/// magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn columns_str(c: &Option<Vec<usize>>) -> String {
    match c {
        None => "all".into(),
        Some(v) if v.is_empty() => "none".into(),
        Some(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    }
}

fn fallback_str(f: OmegaFallback) -> &'static str {
    match f {
        OmegaFallback::Zero => "zero",
        OmegaFallback::TrainMean => "train_mean",
    }
}

fn section(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    let _ = writeln!(out, "section {name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols].iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out.push_str("end\n\n");
}

pub fn to_text(p: &ParameterSet) -> String {
    let mp = &p.membership;
    let k = p.n_classes();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(s, "spec_hash {:016x}", p.spec_hash);
    let _ = writeln!(s, "classes {k}");
    let _ = writeln!(s, "attributes {}", p.choice.n_attributes());
    let _ = writeln!(s, "covariates {}", mp.n_covariates());
    let _ = writeln!(s, "membership_columns {}", columns_str(&mp.columns));
    let _ = writeln!(s, "network_inputs {}", p.latent.inputs());
    let _ = writeln!(s, "network_columns {}", columns_str(&p.network_columns));
    let _ = writeln!(s, "hidden {}", p.latent.hidden());
    let _ = writeln!(s, "latent {}", p.latent.outputs());
    let _ = writeln!(s, "omega {} {}", if mp.uses_omega() { "on" } else { "off" }, fallback_str(p.omega.fallback));
    let _ = writeln!(s, "measurement {}", if p.measurement.is_some() { "on" } else { "off" });
    s.push('\n');

    section(&mut s, "choice.beta", k, p.choice.n_attributes(), &p.choice.beta);
    section(&mut s, "membership.asc", 1, k, &mp.asc);
    section(&mut s, "membership.gamma", k, mp.n_covariates(), &mp.gamma);
    section(&mut s, "membership.delta", k, mp.n_latent(), &mp.delta);
    section(&mut s, "membership.b", 1, k, &mp.b);
    if p.latent.is_active() {
        section(&mut s, "network.w1", p.latent.hidden(), p.latent.inputs() + 1, &p.latent.w1);
        section(&mut s, "network.w2", p.latent.outputs(), p.latent.hidden() + 1, &p.latent.w2);
    }
    if mp.uses_omega() {
        // Written even when empty: a generator carries no per-person effects.
        let flat: Vec<f64> = p.omega.ids.iter().zip(&p.omega.w).flat_map(|(&id, &w)| [id as f64, w]).collect();
        section(&mut s, "omega", p.omega.len(), 2, &flat);
    }
    if let Some(m) = &p.measurement {
        let np = m.n_indicators();
        let levels: Vec<f64> = (0..np).map(|q| m.levels(q) as f64).collect();
        section(&mut s, "measurement.levels", 1, np, &levels);
        section(&mut s, "measurement.alpha", np, m.n_latent(), &m.alpha);
        section(&mut s, "measurement.c", 1, np, &m.c);
        let _ = writeln!(s, "section measurement.log_gaps {np} *");
        for g in &m.log_gaps {
            let line: Vec<String> = g.iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s.push_str("end\n");
    }
    s
}

pub fn save_params(p: &ParameterSet, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(p)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParameterSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text).map_err(|message| Error::Format { path: path.to_path_buf(), message })
}

struct Section {
    rows: usize,
    cols: Option<usize>,
    data: Vec<Vec<f64>>,
}

impl Section {
    fn flat(&self, name: &str, rows: usize, cols: usize) -> std::result::Result<Vec<f64>, String> {
        if self.rows != rows || self.cols != Some(cols) {
            return Err(format!("section {name} is {}x{:?}, expected {rows}x{cols}", self.rows, self.cols));
        }
        Ok(self.data.concat())
    }
}

fn parse_columns(v: &str) -> std::result::Result<Option<Vec<usize>>, String> {
    match v {
        "all" => Ok(None),
        "none" => Ok(Some(Vec::new())),
        _ => v.split(',').map(|c| c.parse().map_err(|_| format!("bad column list `{v}`"))).collect::<std::result::Result<_, _>>().map(Some),
    }
}

pub fn from_text(text: &str) -> std::result::Result<ParameterSet, String> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, first) = lines.next().ok_or("empty file")?;
    let mut it = first.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(format!("not a parameter file (expected `{MAGIC}` header)"));
    }
    let version: u32 = it.next().and_then(|v| v.parse().ok()).ok_or("missing format version")?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version} (this build reads {FORMAT_VERSION})"));
    }

    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    while let Some((ln, line)) = lines.next() {
        let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        if key != "section" {
            header.insert(key.to_owned(), rest.trim().to_owned());
            continue;
        }
        let parts: Vec<&str> = rest.split_whitespace().collect();
        let [name, rows, cols] = parts[..] else {
            return Err(format!("line {ln}: section header needs a name, row count and column count"));
        };
        let rows: usize = rows.parse().map_err(|_| format!("line {ln}: bad row count"))?;
        let cols: Option<usize> = if cols == "*" { None } else { Some(cols.parse().map_err(|_| format!("line {ln}: bad column count"))?) };
        let parse_row = |rl: usize, row: &str| {
            let vals = row
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| format!("line {rl}: cannot parse `{v}`")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(format!("line {rl}: non-finite value"));
            }
            Ok::<_, String>(vals)
        };
        let mut data = Vec::with_capacity(rows);
        match cols {
            // Ragged rows may be blank (and are skipped by the line filter),
            // so read until `end` and let the caller regroup.
            None => loop {
                let (rl, row) = lines.next().ok_or(format!("section {name}: missing `end`"))?;
                if row == "end" {
                    break;
                }
                data.push(parse_row(rl, row)?);
            },
            Some(c) => {
                // Rows of a zero-width section are blank and never reach us.
                let stored = if c == 0 { 0 } else { rows };
                data.resize(rows - stored, Vec::new());
                for _ in 0..stored {
                    let (rl, row) = lines.next().ok_or(format!("section {name}: file ends early"))?;
                    let vals = parse_row(rl, row)?;
                    if vals.len() != c {
                        return Err(format!("line {rl}: expected {c} values, found {}", vals.len()));
                    }
                    data.push(vals);
                }
                match lines.next() {
                    Some((_, "end")) => {}
                    Some((el, other)) => return Err(format!("line {el}: expected `end` after section {name}, found `{other}`")),
                    None => return Err(format!("section {name}: missing `end`")),
                }
            }
        }
        sections.insert(name.to_owned(), Section { rows, cols, data });
    }

    let get = |k: &str| header.get(k).map(String::as_str).ok_or(format!("missing header `{k}`"));
    let num = |k: &str| -> std::result::Result<usize, String> { get(k)?.parse().map_err(|_| format!("header `{k}` is not a count")) };
    let sec = |n: &str| sections.get(n).ok_or(format!("missing section {n}"));

    let k = num("classes")?;
    let a = num("attributes")?;
    let m = num("covariates")?;
    let inputs = num("network_inputs")?;
    let hidden = num("hidden")?;
    let z = num("latent")?;
    let spec_hash = u64::from_str_radix(get("spec_hash")?, 16).map_err(|_| "bad spec_hash")?;
    let omega_hdr: Vec<&str> = get("omega")?.split_whitespace().collect();
    let (use_omega, fallback) = match omega_hdr[..] {
        ["on", f] | ["off", f] => (omega_hdr[0] == "on", match f {
            "zero" => OmegaFallback::Zero,
            "train_mean" => OmegaFallback::TrainMean,
            other => return Err(format!("unknown omega fallback `{other}`")),
        }),
        _ => return Err("header `omega` must be `on|off <fallback>`".into()),
    };
    let has_meas = match get("measurement")? {
        "on" => true,
        "off" => false,
        other => return Err(format!("header `measurement` must be on or off, found `{other}`")),
    };

    let beta = sec("choice.beta")?.flat("choice.beta", k, a)?;
    let rows: Vec<Vec<f64>> = beta.chunks(a.max(1)).map(<[f64]>::to_vec).take(k).collect();
    let choice = if a == 0 { ChoiceParams::zeros(k, 0) } else { ChoiceParams::from_rows(&rows).map_err(|e| e.to_string())? };

    let mut membership = MembershipParams::zeros(k, m, z, use_omega).with_columns(parse_columns(get("membership_columns")?)?);
    membership.asc = sec("membership.asc")?.flat("membership.asc", 1, k)?;
    membership.gamma = sec("membership.gamma")?.flat("membership.gamma", k, m)?;
    membership.delta = sec("membership.delta")?.flat("membership.delta", k, z)?;
    membership.b = sec("membership.b")?.flat("membership.b", 1, k)?;

    let mut latent = LatentNetWeights::zeros(inputs, hidden, z);
    if latent.is_active() {
        latent.w1 = sec("network.w1")?.flat("network.w1", hidden, inputs + 1)?;
        latent.w2 = sec("network.w2")?.flat("network.w2", z, hidden + 1)?;
    }

    let omega = if use_omega {
        let s = sec("omega")?;
        let flat = s.flat("omega", s.rows, 2)?;
        let ids = flat.iter().step_by(2).map(|&v| v as usize).collect();
        let w = flat.iter().skip(1).step_by(2).copied().collect();
        OmegaWeights::new(ids, w, fallback).map_err(|e| e.to_string())?
    } else {
        let mut o = OmegaWeights::empty();
        o.fallback = fallback;
        o
    };

    let measurement = if has_meas {
        let lv = sec("measurement.levels")?;
        let np = lv.cols.unwrap_or(0);
        let levels: Vec<usize> = lv.flat("measurement.levels", 1, np)?.iter().map(|&l| l as usize).collect();
        let mut mm = MeasurementParams::new(&levels, z, use_omega);
        mm.alpha = sec("measurement.alpha")?.flat("measurement.alpha", np, z)?;
        mm.c = sec("measurement.c")?.flat("measurement.c", 1, np)?;
        let gaps = sec("measurement.log_gaps")?;
        let want: usize = levels.iter().map(|l| l.saturating_sub(2)).sum();
        let got: Vec<f64> = gaps.data.concat();
        if got.len() != want {
            return Err(format!("measurement.log_gaps holds {} values, levels imply {want}", got.len()));
        }
        // Rows with no free gap (binary indicators) are blank and were
        // skipped, so refill row by row from the flattened values.
        let mut i = 0;
        for (q, g) in mm.log_gaps.iter_mut().enumerate() {
            let n = levels[q].saturating_sub(2);
            g.copy_from_slice(&got[i..i + n]);
            i += n;
        }
        Some(mm)
    } else {
        None
    };

    let p = ParameterSet {
        membership,
        choice,
        latent,
        network_columns: parse_columns(get("network_columns")?)?,
        omega,
        measurement,
        spec_hash,
    };
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}
