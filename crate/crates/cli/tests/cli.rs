use std::path::Path;
use std::process::Command;

use btc_experiments::output::Table;

fn btc(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_btc"))
        .args(args)
        .env("BTC_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = btc(args, "0");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn header(path: &Path) -> Vec<String> {
    Table::read(path).unwrap().header
}

#[test]
fn every_experiment_writes_its_schema() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();

    run_ok(&["meanfield-dynamics", "--omega", "2", "--t-max", "5", "--output", &p("mf.csv")]);
    assert_eq!(header(Path::new(&p("mf.csv"))), ["t", "m_x", "m_y", "m_z", "m2"]);
    let mf = Table::read(Path::new(&p("mf.csv"))).unwrap();
    assert_eq!(mf.rows.len(), 501);
    assert_eq!(mf.rows[0], vec![0.0, 0.0, 0.0, 1.0, 0.0]);

    run_ok(&["meanfield-sweep", "--omega-grid", "0.5,2", "--n-avg", "4", "--tau", "100", "--output", &p("sweep.csv")]);
    assert_eq!(header(Path::new(&p("sweep.csv"))), ["omega", "m2_fixed_point", "m2_orbit_mean", "m2_orbit_stderr"]);

    run_ok(&["lindblad-dynamics", "--n", "4", "--omega", "2", "--t-max", "1", "--output", &p("lind.csv")]);
    assert_eq!(header(Path::new(&p("lind.csv"))), ["t", "m_x", "m_y", "m_z", "m2", "purity"]);

    run_ok(&["lindblad-sweep", "--n-list", "2,4", "--omega-grid", "0.5,2", "--output", &p("ls.csv")]);
    let ls = Table::read(Path::new(&p("ls.csv"))).unwrap();
    assert_eq!(ls.rows.len(), 4);
    assert!(ls.column("converged").unwrap().iter().all(|&c| c == 1.0));

    run_ok(&["trajectory-ensemble", "--n", "4", "--omega", "2", "--traj", "3", "--t-max", "1", "--output", &p("te.csv")]);
    assert_eq!(header(Path::new(&p("te.csv"))), ["traj", "t", "m_z", "m2", "s_half"]);
    assert_eq!(header(Path::new(&p("te_jumps.csv"))), ["traj", "jumps"]);
    run_ok(&["trajectory-ensemble", "--n", "4", "--omega", "2", "--traj", "3", "--t-max", "1", "--jump-scheme", "first-order", "--output", &p("fo.csv")]);
    let meta = std::fs::read_to_string(dir.path().join("fo.csv.meta")).unwrap();
    assert!(meta.lines().any(|l| l == "jump-scheme=first-order"));

    run_ok(&["unraveling-compare", "--n", "4", "--omega", "2", "--traj", "3", "--t-max", "1", "--output", &p("uc.csv")]);
    let uc = header(Path::new(&p("uc.csv")));
    assert_eq!(uc.len(), 1 + 3 * 3 * 2);
    assert!(uc.contains(&"qsd_s_half_stderr".to_string()));

    run_ok(&["histogram", "--n", "4", "--omega", "2", "--traj", "20", "--time", "1", "--bins", "10", "--output", &p("h.csv")]);
    for q in ["m2", "s_half", "m_z"] {
        let t = Table::read(&dir.path().join(format!("h_{q}.csv"))).unwrap();
        assert_eq!(t.header, ["bin_left", "bin_right", "qj_density", "qsd_density"]);
        assert_eq!(t.rows.len(), 10);
        for col in ["qj_density", "qsd_density"] {
            let mass: f64 = t.rows.iter().zip(t.column(col).unwrap()).map(|(r, d)| d * (r[1] - r[0])).sum();
            assert!((mass - 1.0).abs() < 1e-9);
        }
    }

    run_ok(&["solid-angle", "--output", &p("sa.csv")]);
    let sa = Table::read(Path::new(&p("sa.csv"))).unwrap();
    assert!((sa.rows[0][1] - 0.229).abs() < 1e-3);

    // Fit from a hand-written sweep file.
    let mut data = Table::new(["omega", "m2_orbit_mean"]);
    for i in 0..10 {
        let o = 0.5 + 0.6 * i as f64;
        let x: f64 = o - 1.0;
        data.push(vec![o, if o > 1.0 { 0.23 * x.powf(0.8) / (0.1 + x.powf(0.8)) } else { 0.1 }]);
    }
    data.write(&dir.path().join("in.csv")).unwrap();
    run_ok(&["fit-saturation", "--input", &p("in.csv"), "--output", &p("fit.csv")]);
    let fit = Table::read(Path::new(&p("fit.csv"))).unwrap();
    assert!((fit.column("alpha").unwrap()[0] - 0.8).abs() < 1e-6);
    assert_eq!(header(Path::new(&p("fit_curve.csv"))), ["omega", "m2_fit"]);

    let meta = std::fs::read_to_string(dir.path().join("fit.csv.meta")).unwrap();
    assert!(meta.lines().any(|l| l == "experiment=fit-saturation"));
    assert!(meta.lines().any(|l| l.starts_with("version=")));
    assert!(meta.lines().any(|l| l.starts_with("timestamp=")));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    let out = dir.path().join("mf.csv");
    std::fs::write(&cfg, format!("# mean field\nomega = 0.5\nt_max = 2\noutput = {}\n", out.display())).unwrap();
    run_ok(&["meanfield-dynamics", "--config", cfg.to_str().unwrap(), "--omega", "2"]);
    let meta = std::fs::read_to_string(dir.path().join("mf.csv.meta")).unwrap();
    assert!(meta.lines().any(|l| l == "omega=2"));
    assert!(meta.lines().any(|l| l == "t-max=2"));
    assert_eq!(Table::read(&out).unwrap().rows.len(), 201);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();
    // Configuration errors.
    assert_eq!(btc(&["no-such-experiment"], "0").status.code(), Some(1));
    assert_eq!(btc(&["lindblad-dynamics", "--omega", "2", "--output", &p("x.csv")], "0").status.code(), Some(1));
    assert_eq!(btc(&["histogram", "--n", "4", "--omega", "2", "--bins", "0", "--output", &p("x.csv")], "0").status.code(), Some(1));
    // Computation error: the step is far too large for the dynamics.
    let out = btc(&["lindblad-dynamics", "--n", "30", "--omega", "5", "--dt", "0.5", "--sample-every", "0.5", "--t-max", "5", "--output", &p("x.csv")], "0");
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    // I/O errors.
    std::fs::write(dir.path().join("file"), "").unwrap();
    let blocked = dir.path().join("file").join("x.csv");
    assert_eq!(btc(&["solid-angle", "--output", blocked.to_str().unwrap()], "0").status.code(), Some(3));
    assert_eq!(btc(&["fit-saturation", "--input", &p("missing.csv"), "--output", &p("f.csv")], "0").status.code(), Some(3));
    // Help is not an error.
    assert_eq!(btc(&["--help"], "0").status.code(), Some(0));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut previous: Option<Vec<Vec<u8>>> = None;
    for threads in ["1", "3"] {
        let base = dir.path().join(format!("t{threads}"));
        std::fs::create_dir_all(&base).unwrap();
        let out = base.join("te.csv");
        let status = btc(
            &["trajectory-ensemble", "--n", "6", "--omega", "2", "--traj", "8", "--t-max", "1", "--unraveling", "qsd", "--seed", "9", "--output", out.to_str().unwrap()],
            threads,
        );
        assert!(status.status.success());
        let sweep = base.join("sw.csv");
        let status = btc(&["meanfield-sweep", "--omega-grid", "2", "--n-avg", "6", "--tau", "100", "--seed", "9", "--output", sweep.to_str().unwrap()], threads);
        assert!(status.status.success());
        let bytes = vec![std::fs::read(&out).unwrap(), std::fs::read(&sweep).unwrap()];
        if let Some(prev) = &previous {
            assert_eq!(prev, &bytes);
        }
        previous = Some(bytes);
    }
}
