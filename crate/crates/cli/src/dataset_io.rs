//! Comma-separated dataset files.
//!
//! `individuals`: header `id,<socio...>,ind_<text>...`. Indicator cells of a
//! row are either all filled (1-based levels) or all empty.
//!
//! `tasks`: header `id,task,alt,<attributes...>,chosen`, one row per
//! alternative, `chosen` is 0 or 1 with exactly one 1 per task. Task and
//! alternative indices are 0-based and contiguous.

use std::collections::BTreeMap;
use std::path::Path;

use latclass_core::{ChoiceTask, Dataset, Individual};

use crate::error::{Error, Result};
use crate::output::column_names;

pub const INDICATOR_PREFIX: &str = "ind_";
pub const DEFAULT_LEVELS: usize = 5;

fn load_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Load { path: path.to_path_buf(), line, message: message.into() }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse<T: std::str::FromStr>(path: &Path, line: u64, column: &str, cell: &str) -> Result<T> {
    cell.parse().map_err(|_| load_err(path, line, format!("column `{column}`: cannot parse `{cell}`")))
}

/// Loads and validates a dataset. `levels` gives `L_p` per indicator; when
/// `None` every indicator gets five levels.
pub fn load_dataset(individuals: &Path, tasks: &Path, levels: Option<&[usize]>) -> Result<Dataset> {
    let mut rdr = reader(individuals)?;
    let header = rdr.headers().map_err(|e| load_err(individuals, 1, e.to_string()))?.clone();
    if header.get(0) != Some("id") {
        return Err(load_err(individuals, 1, "first column must be `id`"));
    }
    let first_ind = header.iter().position(|h| h.starts_with(INDICATOR_PREFIX)).unwrap_or(header.len());
    if header.iter().skip(first_ind).any(|h| !h.starts_with(INDICATOR_PREFIX)) {
        return Err(load_err(individuals, 1, format!("indicator columns (`{INDICATOR_PREFIX}*`) must come last")));
    }
    let socio_names: Vec<String> = header.iter().take(first_ind).skip(1).map(str::to_owned).collect();
    let indicator_texts: Vec<String> =
        header.iter().skip(first_ind).map(|h| h[INDICATOR_PREFIX.len()..].to_owned()).collect();
    let p = indicator_texts.len();
    let indicator_levels = match levels {
        Some(l) if l.len() != p => {
            return Err(Error::Config(format!("{} indicator levels configured but the file has {p} indicator columns", l.len())))
        }
        Some(l) => l.to_vec(),
        None => vec![DEFAULT_LEVELS; p],
    };

    let mut people: Vec<Individual> = Vec::new();
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| load_err(individuals, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record_line(&rec);
        if rec.len() != header.len() {
            return Err(load_err(individuals, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let id: usize = parse(individuals, line, "id", &rec[0])?;
        let socio = (1..first_ind).map(|c| parse::<f64>(individuals, line, &header[c], &rec[c])).collect::<Result<Vec<_>>>()?;
        if let Some(c) = socio.iter().position(|v| !v.is_finite()) {
            return Err(load_err(individuals, line, format!("column `{}` is not finite", &header[c + 1])));
        }
        let cells: Vec<&str> = (first_ind..header.len()).map(|c| &rec[c]).collect();
        let empty = cells.iter().filter(|c| c.is_empty()).count();
        let indicators = if p == 0 || empty == p {
            None
        } else if empty > 0 {
            return Err(load_err(individuals, line, "indicator responses must be all present or all empty"));
        } else {
            let mut resp = Vec::with_capacity(p);
            for (q, cell) in cells.iter().enumerate() {
                let v: u64 = parse(individuals, line, &header[first_ind + q], cell)?;
                if v == 0 || v as usize > indicator_levels[q] {
                    return Err(Error::Core(latclass_core::Error::Range(format!(
                        "{}:{line}: indicator `{}` response {v} outside 1..={}",
                        individuals.display(),
                        indicator_texts[q],
                        indicator_levels[q]
                    ))));
                }
                resp.push(v as u8);
            }
            Some(resp)
        };
        if index.insert(id, people.len()).is_some() {
            return Err(load_err(individuals, line, format!("duplicate id {id}")));
        }
        people.push(Individual { id, socio, indicators, tasks: Vec::new() });
    }

    let mut rdr = reader(tasks)?;
    let theader = rdr.headers().map_err(|e| load_err(tasks, 1, e.to_string()))?.clone();
    let n_cols = theader.len();
    if n_cols < 5
        || theader.get(0) != Some("id")
        || theader.get(1) != Some("task")
        || theader.get(2) != Some("alt")
        || theader.get(n_cols - 1) != Some("chosen")
    {
        return Err(load_err(tasks, 1, "header must be `id,task,alt,<attributes...>,chosen`"));
    }
    let attribute_names: Vec<String> = theader.iter().skip(3).take(n_cols - 4).map(str::to_owned).collect();
    // (individual position, task) -> (alt -> (attributes, chosen, line))
    type Rows = BTreeMap<usize, (Vec<f64>, bool, u64)>;
    let mut grouped: BTreeMap<(usize, usize), Rows> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| load_err(tasks, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record_line(&rec);
        if rec.len() != n_cols {
            return Err(load_err(tasks, line, format!("expected {n_cols} fields, found {}", rec.len())));
        }
        let id: usize = parse(tasks, line, "id", &rec[0])?;
        let Some(&pos) = index.get(&id) else {
            return Err(load_err(tasks, line, format!("id {id} is not in the individuals file")));
        };
        let task: usize = parse(tasks, line, "task", &rec[1])?;
        let alt: usize = parse(tasks, line, "alt", &rec[2])?;
        let attrs = (3..n_cols - 1).map(|c| parse::<f64>(tasks, line, &theader[c], &rec[c])).collect::<Result<Vec<_>>>()?;
        let chosen = match &rec[n_cols - 1] {
            "0" => false,
            "1" => true,
            other => return Err(load_err(tasks, line, format!("`chosen` must be 0 or 1, found `{other}`"))),
        };
        if grouped.entry((pos, task)).or_default().insert(alt, (attrs, chosen, line)).is_some() {
            return Err(load_err(tasks, line, format!("duplicate alternative {alt} in task {task} of id {id}")));
        }
    }
    let mut expected_task = vec![0usize; people.len()];
    for ((pos, task), rows) in grouped {
        let last_line = rows.values().map(|r| r.2).max().unwrap_or(0);
        let id = people[pos].id;
        if task != expected_task[pos] {
            return Err(load_err(tasks, last_line, format!("tasks of id {id} must be numbered 0, 1, ... (missing task {})", expected_task[pos])));
        }
        expected_task[pos] += 1;
        if rows.keys().copied().ne(0..rows.len()) {
            return Err(load_err(tasks, last_line, format!("alternatives of id {id} task {task} must be numbered 0, 1, ...")));
        }
        let chosen: Vec<usize> = rows.values().enumerate().filter(|(_, r)| r.1).map(|(j, _)| j).collect();
        if chosen.len() != 1 {
            return Err(load_err(tasks, last_line, format!("id {id} task {task} has {} chosen alternatives, expected exactly one", chosen.len())));
        }
        people[pos].tasks.push(ChoiceTask { alternatives: rows.into_values().map(|r| r.0).collect(), chosen: chosen[0] });
    }

    let d = Dataset { individuals: people, indicator_levels, attribute_names, socio_names, indicator_texts };
    d.validate()?;
    Ok(d)
}

/// Writes the two dataset files. Floats use the shortest representation
/// that parses back to the same value.
pub fn save_dataset(d: &Dataset, individuals: &Path, tasks: &Path) -> Result<()> {
    let socio = column_names(&d.socio_names, d.n_socio(), "s");
    let texts = column_names(&d.indicator_texts, d.n_indicators(), "");
    let attrs = column_names(&d.attribute_names, d.n_attributes(), "x");

    let mut w = csv::Writer::from_path(individuals).map_err(|e| csv_err(individuals, e))?;
    let mut header = vec!["id".to_owned()];
    header.extend(socio);
    header.extend(texts.iter().map(|t| format!("{INDICATOR_PREFIX}{t}")));
    w.write_record(&header).map_err(|e| csv_err(individuals, e))?;
    for ind in &d.individuals {
        let mut row = vec![ind.id.to_string()];
        row.extend(ind.socio.iter().map(f64::to_string));
        match &ind.indicators {
            Some(r) => row.extend(r.iter().map(u8::to_string)),
            None => row.extend(std::iter::repeat(String::new()).take(d.n_indicators())),
        }
        w.write_record(&row).map_err(|e| csv_err(individuals, e))?;
    }
    w.flush().map_err(|e| Error::io(individuals, e))?;

    let mut w = csv::Writer::from_path(tasks).map_err(|e| csv_err(tasks, e))?;
    let mut header = vec!["id".to_owned(), "task".to_owned(), "alt".to_owned()];
    header.extend(attrs);
    header.push("chosen".to_owned());
    w.write_record(&header).map_err(|e| csv_err(tasks, e))?;
    for ind in &d.individuals {
        for (t, task) in ind.tasks.iter().enumerate() {
            for (j, alt) in task.alternatives.iter().enumerate() {
                let mut row = vec![ind.id.to_string(), t.to_string(), j.to_string()];
                row.extend(alt.iter().map(f64::to_string));
                row.push(u8::from(j == task.chosen).to_string());
                w.write_record(&row).map_err(|e| csv_err(tasks, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(tasks, e))?;
    Ok(())
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format { path: path.to_path_buf(), message: format!("{other:?}") },
    }
}
