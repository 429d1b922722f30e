mod support;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lvgm_cli::io::{read_csv, read_json, write_csv, write_json, MetricsFile, ModelFile, Penalty, ReportFile, TruthFile};
use lvgm_core::{fit, FamilySpec, PenaltyConfig, SolveOptions};

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn run(&self, cmd: &str, config: &str, extra: &[&str]) -> Output {
        let cfg = self.path(&format!("{cmd}.cfg"));
        std::fs::write(&cfg, config).unwrap();
        Command::new(env!("CARGO_BIN_EXE_lvgm"))
            .arg(cmd)
            .arg("--config")
            .arg(&cfg)
            .args(extra)
            .output()
            .unwrap()
    }

    fn generate(&self, family: &str, d: usize, n: usize, tag: &str) {
        let out = self.run(
            "generate",
            &format!(
                "family = {family}\nseed = 3\nd = {d}\nn = {n}\nr = 1\ndata_out = {}\ntruth_out = {}\n",
                self.p(&format!("{tag}.csv")),
                self.p(&format!("{tag}.json"))
            ),
            &[],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn model_file_round_trip_is_exact() {
    let ws = Workspace::new();
    let x = support::gaussian_data(5, 60, 1);
    let fam = FamilySpec::gaussian();
    let f = fit(&x, &fam, &PenaltyConfig::new(0.1, 0.2).unwrap(), &SolveOptions::default(), None).unwrap();
    let penalty = Penalty {
        lambda: 0.1,
        gamma: 0.2,
        penalize_diagonal: false,
    };
    let model = ModelFile::from_fit(&f, &fam, x.names(), penalty, false, false);
    write_json(&ws.path("a.json"), &model).unwrap();
    let back: ModelFile = read_json(&ws.path("a.json")).unwrap();
    assert_eq!(back, model);
    write_json(&ws.path("b.json"), &back).unwrap();
    assert_eq!(std::fs::read(ws.path("a.json")).unwrap(), std::fs::read(ws.path("b.json")).unwrap());

    let g = back.to_fit().unwrap();
    assert_eq!(g.params.alpha, f.params.alpha);
    assert_eq!(g.params.theta, f.params.theta);
    assert_eq!(g.center, f.center);
    assert!((&g.params.latent - &f.params.latent).amax() < 1e-12);
    assert_eq!((g.rank, &g.support), (f.rank, &f.support));
}

#[test]
fn data_csv_round_trip_is_exact() {
    let ws = Workspace::new();
    let x = support::gaussian_data(4, 30, 2);
    write_csv(&ws.path("x.csv"), &x).unwrap();
    let y = read_csv(&ws.path("x.csv"), None).unwrap();
    assert_eq!(y.values(), x.values());
    assert_eq!(y.names(), x.names());
}

#[test]
fn generate_fit_evaluate_pipeline() {
    let ws = Workspace::new();
    ws.generate("poisson", 6, 400, "train");
    ws.generate("poisson", 6, 100, "test");
    let truth: TruthFile = read_json(&ws.path("train.json")).unwrap();
    assert_eq!(truth.theta().unwrap().nrows(), 6);
    assert_eq!(truth.rank().unwrap(), 1);

    let fit_cfg = |out: &str| format!("family = poisson\nc1 = 1\nc2 = 2\ndata = {}\nmodel_out = {}\n", ws.p("train.csv"), ws.p(out));
    let out = ws.run("fit", &fit_cfg("model.json"), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = ws.run("fit", &fit_cfg("baseline.json"), &["--no-latent"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let baseline: ModelFile = read_json(&ws.path("baseline.json")).unwrap();
    assert!(baseline.no_latent && baseline.latent.basis.cols == 0);

    let out = ws.run(
        "evaluate",
        &format!(
            "family = poisson\nmodel = {}\nbaseline_model = {}\ntest_data = {}\ntruth = {}\nmetrics_out = {}\n",
            ws.p("model.json"),
            ws.p("baseline.json"),
            ws.p("test.csv"),
            ws.p("train.json"),
            ws.p("metrics.json")
        ),
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let m: MetricsFile = read_json(&ws.path("metrics.json")).unwrap();
    assert_eq!(m.n_test, 100);
    assert!(m.holdout_nll.latent.is_finite() && m.holdout_nll.no_latent.unwrap().is_finite());
    let s = m.structure.unwrap();
    assert!((0.0..=1.0).contains(&s.fdr) && (0.0..=1.0).contains(&s.pwr));
    assert_eq!(s.true_edges, 6);
}

#[test]
fn reduced_fit_matches_full_fit() {
    let ws = Workspace::new();
    ws.generate("gaussian", 6, 300, "x");
    let cfg = |out: &str| format!("lambda = 0.05\ngamma = 0.05\ndata = {}\nmodel_out = {}\n", ws.p("x.csv"), ws.p(out));
    assert!(ws.run("fit", &cfg("full.json"), &[]).status.success());
    assert!(ws.run("fit", &cfg("reduced.json"), &["--reduced"]).status.success());
    let full: ModelFile = read_json(&ws.path("full.json")).unwrap();
    let red: ModelFile = read_json(&ws.path("reduced.json")).unwrap();
    assert!(red.reduced);
    let (a, b) = (full.diagnostics.objective, red.diagnostics.objective);
    assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn select_writes_report_and_refit() {
    let ws = Workspace::new();
    ws.generate("gaussian", 8, 1000, "x");
    let out = ws.run(
        "select",
        &format!(
            "num_subsamples = 8\ngrid_size = 10\ndata = {}\nreport_out = {}\nmodel_out = {}\n",
            ws.p("x.csv"),
            ws.p("report.json"),
            ws.p("refit.json")
        ),
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: ReportFile = read_json(&ws.path("report.json")).unwrap();
    assert_eq!(report.num_subsamples, 8);
    assert!(!report.path.is_empty());
    let refit: ModelFile = read_json(&ws.path("refit.json")).unwrap();
    assert_eq!((refit.penalty.lambda, refit.penalty.gamma), (0.0, 0.0));
    for &(i, j, v) in &refit.theta.entries {
        if i != j && v != 0.0 {
            assert!(report.structure.edges.contains(&(i, j)), "refit edge ({i}, {j}) was not selected");
        }
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let ws = Workspace::new();
    ws.generate("gaussian", 4, 50, "x");
    let unknown = ws.run("fit", &format!("data = {}\nmodel_out = {}\nlamda = 0.1\n", ws.p("x.csv"), ws.p("m.json")), &[]);
    assert_eq!(code(&unknown), 2);
    assert!(stderr(&unknown).contains("lamda"));
    let missing = ws.run("fit", &format!("data = {}\nmodel_out = {}\n", ws.p("nope.csv"), ws.p("m.json")), &[]);
    assert_eq!(code(&missing), 2);
    let bad_dir = ws.run("fit", &format!("data = {}\nmodel_out = {}\n", ws.p("x.csv"), ws.p("no/such/dir/m.json")), &[]);
    assert_eq!(code(&bad_dir), 2);
    assert!(!ws.path("m.json").exists());
    let flags = ws.run("fit", &format!("family = ising\ndata = {}\nmodel_out = {}\n", ws.p("x.csv"), ws.p("m.json")), &["--reduced"]);
    assert_eq!(code(&flags), 2);
}

#[test]
fn non_convergence_exits_with_3_and_still_writes() {
    let ws = Workspace::new();
    ws.generate("ising", 5, 200, "x");
    let out = ws.run(
        "fit",
        &format!("family = ising\nmax_iter = 2\nc1 = 0.5\nc2 = 0.5\ndata = {}\nmodel_out = {}\n", ws.p("x.csv"), ws.p("m.json")),
        &[],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let m: ModelFile = read_json(&ws.path("m.json")).unwrap();
    assert!(!m.diagnostics.converged);
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn invalid_data_is_rejected() {
    let ws = Workspace::new();
    let fit_cfg = |family: &str, data: &str| format!("family = {family}\ndata = {}\nmodel_out = {}\n", ws.p(data), ws.p("m.json"));
    write(&ws.path("nan.csv"), "a,b\n1.0,2.0\nNaN,1.0\n0.5,0.1\n");
    let out = ws.run("fit", &fit_cfg("gaussian", "nan.csv"), &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    write(&ws.path("neg.csv"), "a,b\n1,2\n0,-1\n3,0\n");
    let out = ws.run("fit", &fit_cfg("poisson", "neg.csv"), &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains('b'), "{}", stderr(&out));

    write(&ws.path("spin.csv"), "a,b\n1,-1\n0,1\n");
    assert_eq!(code(&ws.run("fit", &fit_cfg("ising", "spin.csv"), &[])), 1);
    assert!(!ws.path("m.json").exists());
}

#[test]
fn generate_is_deterministic() {
    let ws = Workspace::new();
    ws.generate("exponential", 5, 120, "a");
    ws.generate("exponential", 5, 120, "b");
    for ext in ["csv", "json"] {
        assert_eq!(std::fs::read(ws.path(&format!("a.{ext}"))).unwrap(), std::fs::read(ws.path(&format!("b.{ext}"))).unwrap());
    }
    let x = read_csv(&ws.path("a.csv"), Some(&FamilySpec::exponential())).unwrap();
    assert_eq!((x.dim(), x.n_samples()), (5, 120));
}
