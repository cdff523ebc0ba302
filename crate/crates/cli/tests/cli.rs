use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use latclass::dataset_io::{load_dataset, save_dataset};
use latclass::manifest::Manifest;
use latclass::params_io::{from_text, to_text};
use latclass::Error;
use latclass_core::synth::{generate, random_generator, PopulationConfig};
use latclass_core::{BaselineParams, ModelSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latclass"))
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dataset_files_round_trip() {
    let cfg = PopulationConfig { individuals: 25, indicator_levels: vec![5, 3, 7], ..PopulationConfig::default() };
    let spec = ModelSpec { k: 3, z: 2, ..ModelSpec::default() };
    let gen = random_generator(&cfg, &spec, 1.0, 5).unwrap();
    let (mut d, _) = generate(&cfg, &gen, 6).unwrap();
    d.individuals[4].indicators = None;
    let dir = tempfile::tempdir().unwrap();
    let (i, t) = (dir.path().join("i.csv"), dir.path().join("t.csv"));
    save_dataset(&d, &i, &t).unwrap();
    let back = load_dataset(&i, &t, Some(&[5, 3, 7])).unwrap();
    assert_eq!(back, d);
}

#[test]
fn out_of_range_response_names_indicator_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let (i, t) = (dir.path().join("i.csv"), dir.path().join("t.csv"));
    std::fs::write(&i, "id,age,ind_likes cars,ind_bikes\n1,30,2,3\n2,40,6,1\n").unwrap();
    std::fs::write(&t, "id,task,alt,price,chosen\n1,0,0,1.0,1\n1,0,1,2.0,0\n2,0,0,1.0,0\n2,0,1,2.0,1\n").unwrap();
    let err = load_dataset(&i, &t, None).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Core(latclass_core::Error::Range(_))), "{msg}");
    assert!(msg.contains("likes cars") && msg.contains(":3:") && msg.contains('6'), "{msg}");
}

#[test]
fn malformed_task_files_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let (i, t) = (dir.path().join("i.csv"), dir.path().join("t.csv"));
    std::fs::write(&i, "id,age\n1,30\n").unwrap();
    std::fs::write(&t, "id,task,alt,price,chosen\n1,0,0,1.0,1\n1,0,1,2.0,1\n").unwrap();
    let msg = load_dataset(&i, &t, None).unwrap_err().to_string();
    assert!(msg.contains("2 chosen alternatives"), "{msg}");
    std::fs::write(&t, "id,task,alt,price,chosen\n1,0,0,abc,1\n1,0,1,2.0,0\n").unwrap();
    let msg = load_dataset(&i, &t, None).unwrap_err().to_string();
    assert!(msg.contains(":2:") && msg.contains("price"), "{msg}");
}

#[test]
fn parameter_files_round_trip_exactly() {
    let cfg = PopulationConfig { indicator_levels: vec![5, 2, 4], ..PopulationConfig::default() };
    for spec in [
        ModelSpec { k: 3, z: 2, h: 5, ..ModelSpec::default() },
        ModelSpec { k: 2, z: 1, use_omega: false, network_columns: Some(vec![1]), membership_columns: Some(vec![]), ..ModelSpec::default() },
    ] {
        let p = random_generator(&cfg, &spec, 2.0, 8).unwrap();
        let back = from_text(&to_text(&p)).unwrap();
        assert_eq!(back, p);
    }
    let base = BaselineParams {
        membership: latclass_core::membership::MembershipParams::zeros(2, 0, 0, false),
        choice: latclass_core::choice::ChoiceParams::from_rows(&[vec![0.25, -1e-9], vec![3.5, 0.0]]).unwrap(),
        spec_hash: 42,
    }
    .to_parameter_set();
    assert_eq!(from_text(&to_text(&base)).unwrap(), base);
}

#[test]
fn check_passes_on_a_fresh_build() {
    let out = ok(&["check", "--points", "5"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    assert_eq!(run(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit", "--set", "model.k=1", "--set", "model.z=2", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("latent classes"));
    // Missing data files are a runtime failure.
    let out = run(&["fit", "--individuals", "/nonexistent/i.csv", "--tasks", "/nonexistent/t.csv", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_fit_evaluate_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = demo_config();
    let sim = root.join("sim");
    let fast = ["--set", "model.em_iterations=4", "--set", "model.restarts=2", "--set", "simulate.population.individuals=120"];
    let data = ["--individuals", &format!("{}/individuals.csv", s(&sim)), "--tasks", &format!("{}/tasks.csv", s(&sim))].map(String::from);

    let mut a = vec!["simulate", "-c", s(&cfg), "--out", s(&sim)];
    a.extend(fast);
    ok(&a);
    for f in ["individuals.csv", "tasks.csv", "truth.csv", "generator.params", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }

    let fit = root.join("fit");
    let mut a = vec!["fit", "-c", s(&cfg), "--out", s(&fit)];
    a.extend(fast);
    a.extend(data.iter().map(String::as_str));
    let out = ok(&a);
    let text = String::from_utf8_lossy(&out.stdout);
    for section in ["Model comparison", "Choice parameters", "Class membership parameters", "Measurement parameters", "Class profiles", "Notes"] {
        assert!(text.contains(section), "missing {section}:\n{text}");
    }
    let man = Manifest::read(&fit.join("manifest.json")).unwrap();
    for f in ["params.txt", "trace.csv", "posteriors.csv", "latent_space.csv", "report.txt", "model_comparison.csv", "choice_params.csv"] {
        assert!(man.outputs.iter().any(|o| o.path == Path::new(f)), "{f} not in manifest");
    }
    assert_eq!(man.inputs.len(), 3);

    let base = root.join("base");
    let mut a = vec!["fit-baseline", "-c", s(&cfg), "--out", s(&base)];
    a.extend(fast);
    a.extend(data.iter().map(String::as_str));
    ok(&a);
    assert!(!base.join("latent_space.csv").exists());

    let eval = root.join("eval");
    let params = fit.join("params.txt");
    let mut a = vec!["evaluate", "-c", s(&cfg), "--out", s(&eval), "--params", s(&params)];
    a.extend(data.iter().map(String::as_str));
    ok(&a);
    let e = std::fs::read_to_string(eval.join("evaluation.csv")).unwrap();
    assert!(e.starts_with("individuals,tasks,ll,null_ll,hit_rate"));
    assert!(e.lines().nth(1).unwrap().starts_with("24,72,"), "{e}");

    let cmp = root.join("cmp");
    ok(&["report", s(&base), s(&fit), "--out", s(&cmp)]);
    let c = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(c.lines().count(), 3);
    assert!(c.lines().nth(1).unwrap().starts_with("base,LCCM,2,0"));
    assert!(c.lines().nth(2).unwrap().starts_with("fit,LCCM-ANN,2,2"));
}

#[test]
fn reruns_reproduce_output_digests_for_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo_config();
    let sim = dir.path().join("sim");
    ok(&["simulate", "-c", s(&cfg), "--out", s(&sim), "--set", "simulate.population.individuals=80"]);
    let digests = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        ok(&[
            "fit",
            "-c",
            s(&cfg),
            "--out",
            s(&out),
            "--workers",
            workers,
            "--individuals",
            &format!("{}/individuals.csv", s(&sim)),
            "--tasks",
            &format!("{}/tasks.csv", s(&sim)),
            "--set",
            "model.em_iterations=3",
        ]);
        Manifest::read(&out.join("manifest.json")).unwrap().outputs
    };
    let a = digests("a", "1");
    let b = digests("b", "3");
    assert!(!a.is_empty());
    assert_eq!(a, b);
}
