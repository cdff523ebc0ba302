//! The fit report: model comparison, restart summary, parameter tables with
//! standard errors, class profiles and indicator accuracy. Every table is
//! written as CSV; `report.txt` renders them together.

use std::fmt::Write as _;
use std::path::Path;

use latclass_core::baseline::{information_criteria, null_ll, NullModel};
use latclass_core::inference::{
    class_profiles, evaluate_holdout, free_parameters, Block, BlockErrors, HoldoutMetrics, ParamRef,
};
use latclass_core::latent_net::OmegaFallback;
use latclass_core::measurement::indicator_accuracy;
use latclass_core::{Dataset, MultiStartReport, ParameterSet};

use crate::error::Result;
use crate::output::{column_names, exact, fixed, Table};

/// Socio columns with more distinct values than this are not profiled
/// unless requested explicitly.
pub const MAX_PROFILE_VALUES: usize = 10;

pub const COMPARISON_FILE: &str = "model_comparison.csv";

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub model: String,
    pub classes: usize,
    pub latent: usize,
    pub n_params: usize,
    pub null_ll: f64,
    pub ll: f64,
    pub aic: f64,
    pub bic: f64,
    pub rho_squared: f64,
    pub test: Option<HoldoutMetrics>,
    pub em_iterations: usize,
    pub restarts: usize,
    pub failed_restarts: usize,
    pub ll_variance: f64,
    pub test_ll_variance: Option<f64>,
}

const SUMMARY_HEADER: [&str; 17] = [
    "model",
    "classes",
    "latent_variables",
    "n_params",
    "null_ll",
    "ll",
    "aic",
    "bic",
    "rho_squared",
    "test_null_ll",
    "test_ll",
    "test_hit_rate",
    "em_iterations",
    "restarts",
    "failed_restarts",
    "ll_variance",
    "test_ll_variance",
];

impl Summary {
    pub fn csv_table(rows: &[&Summary]) -> Table {
        let mut t = Table::new(SUMMARY_HEADER);
        let opt = |v: Option<f64>| v.map_or_else(String::new, exact);
        for s in rows {
            t.push(vec![
                s.model.clone(),
                s.classes.to_string(),
                s.latent.to_string(),
                s.n_params.to_string(),
                exact(s.null_ll),
                exact(s.ll),
                exact(s.aic),
                exact(s.bic),
                exact(s.rho_squared),
                opt(s.test.map(|t| t.null_ll)),
                opt(s.test.map(|t| t.ll)),
                opt(s.test.map(|t| t.hit_rate)),
                s.em_iterations.to_string(),
                s.restarts.to_string(),
                s.failed_restarts.to_string(),
                exact(s.ll_variance),
                opt(s.test_ll_variance),
            ]);
        }
        t
    }
}

/// Two-decimal rendering of comparison rows read back from CSV, for the
/// side-by-side `report` command.
pub fn comparison_text(t: &Table) -> Table {
    let mut out = Table::new(t.header.iter().cloned());
    for r in &t.rows {
        out.push(
            r.iter()
                .zip(&t.header)
                .map(|(c, h)| match c.parse::<f64>() {
                    Ok(v) if h == "test_hit_rate" || h == "rho_squared" => fixed(v, 3),
                    Ok(v) if c.contains(['.', 'e']) => fixed(v, 2),
                    _ => c.clone(),
                })
                .collect(),
        );
    }
    out
}

/// Everything `fit` and `fit-baseline` report about the selected model.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub label: String,
    pub summary: Summary,
    pub restarts: Table,
    pub choice: Table,
    pub membership: Table,
    pub measurement: Option<Table>,
    pub profiles: Table,
    pub indicator_accuracy: Option<f64>,
    pub notes: Vec<String>,
}

pub struct ReportInputs<'a> {
    pub label: &'a str,
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
    pub multi: &'a MultiStartReport,
    /// `None` when standard errors were skipped.
    pub errors: Option<&'a [(Block, latclass_core::Result<BlockErrors>)]>,
    pub null_model: NullModel,
    pub profile_columns: Option<&'a [usize]>,
}

impl FitReport {
    pub fn build(inp: &ReportInputs<'_>) -> Result<Self> {
        let best = inp.multi.best_fit();
        let params = &best.params;
        let train = inp.train;
        let mut notes = Vec::new();

        let ll = best.trace.final_ll();
        let n_params = params.free_parameter_count();
        let train_null = null_ll(train, inp.null_model);
        let ic = information_criteria(ll, n_params, train.n_observations(), train_null);

        let mut test_lls = Vec::new();
        let test = match inp.test.filter(|t| !t.is_empty()) {
            Some(t) => {
                for fit in inp.multi.successful() {
                    test_lls.push(evaluate_holdout(t, &fit.params, inp.null_model)?.ll);
                }
                let m = evaluate_holdout(t, params, inp.null_model)?;
                if m.omega_fallbacks > 0 {
                    let policy = match params.omega.fallback {
                        OmegaFallback::Zero => "zero",
                        OmegaFallback::TrainMean => "the training mean",
                    };
                    notes.push(format!(
                        "{} of {} test individuals have no estimated individual effect and used {policy}.",
                        m.omega_fallbacks,
                        t.len()
                    ));
                }
                Some(m)
            }
            None => None,
        };
        let failed = inp.multi.failures();
        if failed > 0 {
            notes.push(format!("{failed} of {} restarts failed and were excluded.", inp.multi.runs.len()));
        }
        let summary = Summary {
            model: if params.latent.is_active() || params.membership.uses_omega() { "LCCM-ANN".into() } else { "LCCM".into() },
            classes: params.n_classes(),
            latent: params.latent.outputs(),
            n_params,
            null_ll: train_null,
            ll,
            aic: ic.aic,
            bic: ic.bic,
            rho_squared: ic.rho_squared,
            test,
            em_iterations: best.trace.cycles(),
            restarts: inp.multi.runs.len(),
            failed_restarts: failed,
            ll_variance: inp.multi.ll_variance,
            test_ll_variance: (!test_lls.is_empty()).then(|| latclass_core::em::population_variance(test_lls.iter().copied())),
        };
        if params.measurement.is_some() {
            notes.push(
                "LL is the choice log-likelihood. Estimation maximizes it plus the indicator log-likelihood; the final total objective is in trace.csv."
                    .into(),
            );
        }
        if params.latent.is_active() || params.membership.uses_omega() {
            notes.push(format!(
                "The parameter count includes {} network weights and {} individual effects.",
                params.latent.n_params(),
                params.omega.len()
            ));
        }

        let mut restarts = Table::new(["restart", "seed", "status", "ll", "total_objective", "em_iterations", "test_ll", "selected"]);
        let mut test_iter = test_lls.iter();
        for (i, run) in inp.multi.runs.iter().enumerate() {
            let row = match &run.outcome {
                Ok(fit) => vec![
                    run.restart.to_string(),
                    run.seed.to_string(),
                    "ok".into(),
                    exact(fit.trace.final_ll()),
                    exact(fit.trace.final_record().total_objective),
                    fit.trace.cycles().to_string(),
                    test_iter.next().map_or_else(String::new, |&v| exact(v)),
                    u8::from(i == inp.multi.best).to_string(),
                ],
                Err(e) => vec![
                    run.restart.to_string(),
                    run.seed.to_string(),
                    format!("failed: {e}"),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "0".into(),
                ],
            };
            restarts.push(row);
        }

        let names = Names::new(train, params);
        let block = |b: Block| -> Table {
            let found = inp.errors.and_then(|e| e.iter().find(|(bb, _)| *bb == b));
            match found {
                Some((_, Ok(errs))) => {
                    param_table(&names, errs.estimates.iter().map(|e| (e.param, e.value, Some((e.std_error, e.z, e.p_value)))))
                }
                _ => param_table(&names, free_parameters(params, b).into_iter().map(|(r, v)| (r, v, None))),
            }
        };
        let choice = block(Block::Choice);
        let membership = block(Block::Membership);
        let measurement = params.measurement.as_ref().map(|_| block(Block::Measurement));
        if let Some(errs) = inp.errors {
            notes.push("Standard errors are conditional: each block's Hessian holds the other blocks at their estimates.".into());
            for (b, r) in errs {
                match r {
                    Ok(e) if e.ill_conditioned() => notes.push(format!(
                        "{} block: Hessian is ill-conditioned (condition number {:.3e}{}{}); treat its standard errors with care.",
                        block_name(*b),
                        e.condition_number,
                        if e.pseudo_inverse { ", pseudo-inverse used" } else { "" },
                        if e.not_negative_definite { ", not negative definite" } else { "" },
                    )),
                    Ok(_) => {}
                    Err(err) => notes.push(format!("{} block: standard errors unavailable ({err}).", block_name(*b))),
                }
            }
        }

        let cols: Vec<usize> = match inp.profile_columns {
            Some(c) => c.to_vec(),
            None => (0..train.n_socio()).filter(|&c| distinct(train, c) <= MAX_PROFILE_VALUES).collect(),
        };
        let profiles = profile_table(train, best, &cols, &names)?;
        let indicator_accuracy = match params.measurement {
            Some(_) if train.has_all_indicators() => Some(indicator_accuracy(train, params)?),
            _ => None,
        };

        Ok(Self {
            label: inp.label.to_owned(),
            summary,
            restarts,
            choice,
            membership,
            measurement,
            profiles,
            indicator_accuracy,
            notes,
        })
    }

    /// Writes the CSV tables and `report.txt`; returns the file names.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        let mut files = Vec::new();
        let mut put = |name: &str, t: &Table| -> Result<()> {
            t.write_csv(&dir.join(name))?;
            files.push(name.to_owned());
            Ok(())
        };
        put(COMPARISON_FILE, &Summary::csv_table(&[&self.summary]))?;
        put("restarts.csv", &self.restarts)?;
        put("choice_params.csv", &self.choice)?;
        put("membership_params.csv", &self.membership)?;
        if let Some(m) = &self.measurement {
            put("measurement_params.csv", m)?;
        }
        put("class_profiles.csv", &self.profiles)?;
        let path = dir.join("report.txt");
        std::fs::write(&path, self.render()).map_err(|e| crate::Error::io(&path, e))?;
        files.push("report.txt".into());
        Ok(files)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Fit report: {}\n", self.label);
        let _ = writeln!(s, "== Model comparison ==\n{}", comparison_text(&Summary::csv_table(&[&self.summary])).render());
        let _ = writeln!(s, "== Restarts ==\n{}", self.restarts.render());
        let _ = writeln!(s, "== Choice parameters ==\n{}", rounded(&self.choice).render());
        let _ = writeln!(s, "== Class membership parameters ==\n{}", rounded(&self.membership).render());
        if let Some(m) = &self.measurement {
            let _ = writeln!(s, "== Measurement parameters ==\n{}", rounded(m).render());
        }
        if let Some(a) = self.indicator_accuracy {
            let _ = writeln!(s, "Mean indicator accuracy (modal predicted level): {a:.3}\n");
        }
        let _ = writeln!(s, "== Class profiles: P(value | class) ==\n{}", rounded(&self.profiles).render());
        if !self.notes.is_empty() {
            let _ = writeln!(s, "== Notes ==");
            for n in &self.notes {
                let _ = writeln!(s, "- {n}");
            }
        }
        s
    }
}

fn block_name(b: Block) -> &'static str {
    match b {
        Block::Choice => "choice",
        Block::Membership => "membership",
        Block::Measurement => "measurement",
    }
}

fn distinct(d: &Dataset, col: usize) -> usize {
    let mut v: Vec<f64> = d.individuals.iter().map(|i| i.socio[col]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Human-readable names for parameters.
struct Names {
    attributes: Vec<String>,
    covariates: Vec<String>,
    socio: Vec<String>,
    indicators: Vec<String>,
}

impl Names {
    fn new(d: &Dataset, p: &ParameterSet) -> Self {
        let socio = column_names(&d.socio_names, d.n_socio(), "s");
        let covariates = match &p.membership.columns {
            Some(c) => c.iter().map(|&i| socio[i].clone()).collect(),
            None => socio.clone(),
        };
        Self {
            attributes: column_names(&d.attribute_names, d.n_attributes(), "x"),
            covariates,
            socio,
            indicators: column_names(&d.indicator_texts, d.n_indicators(), "indicator "),
        }
    }

    /// (class or indicator, term) columns, 1-based.
    fn describe(&self, r: ParamRef) -> (String, String) {
        match r {
            ParamRef::Beta { class, attribute } => (format!("class {}", class + 1), self.attributes[attribute].clone()),
            ParamRef::Asc { class } => (format!("class {}", class + 1), "ASC".into()),
            ParamRef::Gamma { class, covariate } => (format!("class {}", class + 1), self.covariates[covariate].clone()),
            ParamRef::Delta { class, latent } => (format!("class {}", class + 1), format!("r_{}", latent + 1)),
            ParamRef::B { class } => (format!("class {}", class + 1), "omega".into()),
            ParamRef::Alpha { indicator, latent } => (self.indicators[indicator].clone(), format!("alpha_{}", latent + 1)),
            ParamRef::C { indicator } => (self.indicators[indicator].clone(), "c".into()),
            ParamRef::Tau { indicator, level } => (self.indicators[indicator].clone(), format!("tau_{}", level + 1)),
        }
    }
}

fn param_table(names: &Names, rows: impl Iterator<Item = (ParamRef, f64, Option<(f64, f64, f64)>)>) -> Table {
    let mut t = Table::new(["parameter", "group", "term", "estimate", "std_error", "z", "p_value"]);
    for (r, v, se) in rows {
        let (g, term) = names.describe(r);
        let (se, z, p) = se.map_or((String::new(), String::new(), String::new()), |(s, z, p)| (exact(s), exact(z), exact(p)));
        t.push(vec![r.label(), g, term, exact(v), se, z, p]);
    }
    t
}

fn profile_table(d: &Dataset, fit: &latclass_core::FitResult, cols: &[usize], names: &Names) -> Result<Table> {
    let k = fit.posteriors.n_classes();
    let mut t = Table::new(["column".to_owned(), "value".to_owned()].into_iter().chain((1..=k).map(|c| format!("class {c}"))));
    for prof in class_profiles(d, &fit.posteriors, cols)? {
        for (v, value) in prof.values.iter().enumerate() {
            let mut row = vec![names.socio[prof.column].clone(), exact(*value)];
            row.extend((0..k).map(|c| exact(prof.rows[c][v])));
            t.push(row);
        }
    }
    let mut shares = vec!["class share".to_owned(), String::new()];
    shares.extend(fit.posteriors.class_shares().iter().map(|&s| exact(s)));
    t.push(shares);
    Ok(t)
}

/// Four-decimal copy of a numeric table for the text report.
fn rounded(t: &Table) -> Table {
    let mut out = Table::new(t.header.iter().cloned());
    for r in &t.rows {
        out.push(
            r.iter()
                .zip(&t.header)
                .map(|(c, h)| match c.parse::<f64>() {
                    Ok(v) if h != "value" && c.contains(['.', 'e']) => fixed(v, 4),
                    _ => c.clone(),
                })
                .collect(),
        );
    }
    out
}
