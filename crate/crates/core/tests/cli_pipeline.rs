use std::fs;
use std::path::Path;

use btrt::cli::run_cli;
use btrt::io::{read_draws, read_tensor, read_values};

const SIM: &str = "
[simulate]
dims = 8,8
regions = 1
radius_min = 1
radius_max = 2
n = 80
gamma = 1.5,-0.5
sigma2 = 0.25
seed = 11
";

const FIT: &str = "
[model]
ranks = 2,2
iterations = 150
burn_in = 30
seed = 4
";

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["btrt"];
    v.extend_from_slice(args);
    run_cli(v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("sim.cfg"), SIM).unwrap();
    fs::write(root.join("fit.cfg"), FIT).unwrap();
    let (sim, fit1) = (root.join("sim"), root.join("fit1"));

    assert_eq!(run(&["simulate", "--config", s(&root.join("sim.cfg")), "--out", s(&sim)]), 0);
    for f in ["X.btrt", "y.txt", "eta.csv", "B_true.btrt", "truth.txt", "manifest.cfg", "invocation.txt"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    assert_eq!(read_tensor(&sim.join("X.btrt")).unwrap().dims(), &[8, 8, 80]);

    let fit_args = |out: &Path, threads: &'static str| {
        vec!["--threads".to_string(), threads.into(), "fit".into(), "--config".into(), s(&root.join("fit.cfg")).into(), "--data".into(), s(&sim).into(), "--out".into(), s(out).into()]
    };
    let code = run(&fit_args(&fit1, "1").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, 0);
    let draws = read_draws(&fit1.join("draws.bin")).unwrap();
    assert_eq!(draws.retained(), 120);
    assert_eq!(draws.manifest.dims, vec![8, 8]);
    let report = fs::read_to_string(fit1.join("report.txt")).unwrap();
    assert!(report.contains("ess_median = ") && report.contains("trend_flag = "), "{report}");
    assert!(fs::read_to_string(fit1.join("dic.txt")).unwrap().starts_with("dic = "));

    // Thread count never changes results.
    let fit2 = root.join("fit2");
    let code = run(&fit_args(&fit2, "3").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, 0);
    for f in ["draws.bin", "report.txt", "b_mean.btrt", "dic.txt"] {
        assert_eq!(fs::read(fit1.join(f)).unwrap(), fs::read(fit2.join(f)).unwrap(), "{f}");
    }

    // The emitted manifest reproduces the run.
    let fit3 = root.join("fit3");
    assert_eq!(run(&["fit", "--config", s(&fit1.join("manifest.cfg")), "--out", s(&fit3)]), 0);
    assert_eq!(fs::read(fit1.join("draws.bin")).unwrap(), fs::read(fit3.join("draws.bin")).unwrap());

    let sel = root.join("sel");
    assert_eq!(run(&["select", "--draws", s(&fit1.join("draws.bin")), "--b", "0.05", "--out", s(&sel)]), 0);
    let est = read_tensor(&sel.join("estimate.btrt")).unwrap();
    assert_eq!(est.dims(), &[8, 8]);
    assert!(fs::read_to_string(sel.join("selection.txt")).unwrap().starts_with("b = 0.05\n"));

    let pred = root.join("pred");
    assert_eq!(run(&["predict", "--draws", s(&fit1.join("draws.bin")), "--data", s(&sim), "--out", s(&pred)]), 0);
    let med = read_values(&pred.join("predictions.txt")).unwrap();
    assert_eq!(med.len(), 80);
    let quant = fs::read_to_string(pred.join("quantiles.csv")).unwrap();
    assert!(quant.starts_with("q0.025,q0.975\n"));
    assert_eq!(quant.lines().count(), 81);

    let glm = root.join("glm");
    assert_eq!(run(&["glm", "--data", s(&sim), "--out", s(&glm)]), 0);
    let table = fs::read_to_string(glm.join("glm_voxels.csv")).unwrap();
    assert!(table.starts_with("i0,i1,estimate,se,p_value,rejected,zero_variance\n"));
    assert_eq!(table.lines().count(), 65);
    assert_eq!(read_tensor(&glm.join("glm_map.btrt")).unwrap().dims(), &[8, 8]);

    let diag = root.join("diag");
    let code = run(&["diagnose", "--draws", s(&fit1.join("draws.bin")), "--truth", s(&sim.join("B_true.btrt")), "--out", s(&diag)]);
    assert_eq!(code, 0);
    let rep = fs::read_to_string(diag.join("report.txt")).unwrap();
    assert!(!rep.contains("rmse_b = NA"), "{rep}");

    let met = root.join("met");
    let y = s(&sim.join("y.txt")).to_string();
    assert_eq!(run(&["metrics", "--pred", &y, "--actual", &y, "--out", s(&met)]), 0);
    assert_eq!(fs::read_to_string(met.join("metrics.txt")).unwrap(), "rmspe = 0.0\npearson = 1.0\n");
}

#[test]
fn rank_one_is_warned_or_raised() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("sim.cfg"), SIM).unwrap();
    fs::write(root.join("fit.cfg"), FIT.replace("iterations = 150", "iterations = 40")).unwrap();
    let sim = root.join("sim");
    assert_eq!(run(&["simulate", "--config", s(&root.join("sim.cfg")), "--out", s(&sim)]), 0);
    let cfg = s(&root.join("fit.cfg")).to_string();

    let warned = root.join("warned");
    assert_eq!(run(&["fit", "--config", &cfg, "--data", s(&sim), "--ranks", "1,3", "--out", s(&warned)]), 0);
    let rep = fs::read_to_string(warned.join("report.txt")).unwrap();
    assert!(rep.contains("rank of 1") && rep.contains("diverge"), "{rep}");
    assert_eq!(read_draws(&warned.join("draws.bin")).unwrap().manifest.ranks, vec![1, 3]);

    fs::write(root.join("raise.cfg"), FIT.replace("iterations = 150", "iterations = 40") + "auto_raise_rank1 = true\n").unwrap();
    let raised = root.join("raised");
    let code = run(&["fit", "--config", s(&root.join("raise.cfg")), "--data", s(&sim), "--ranks", "1,3", "--out", s(&raised)]);
    assert_eq!(code, 0);
    assert_eq!(read_draws(&raised.join("draws.bin")).unwrap().manifest.ranks, vec![2, 3]);
}

#[test]
fn user_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["fit", "--bogus"]), 1);
    assert_eq!(run(&["fit", "--data", s(tmp.path()), "--out", s(&out)]), 1);
    assert_eq!(run(&["select", "--draws", s(&tmp.path().join("none.bin")), "--out", s(&out)]), 1);
    fs::write(tmp.path().join("bad.cfg"), "[model]\nrnaks = 2,2\n").unwrap();
    assert_eq!(run(&["simulate", "--config", s(&tmp.path().join("bad.cfg")), "--out", s(&out)]), 1);
    assert_eq!(run(&["--help"]), 0);
}
