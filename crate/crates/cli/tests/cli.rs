use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hmig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmig")).args(args).output().expect("run hmig")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const WORLD: &str = r#"
seed = 3
rows = 3
cols = 4
subscribers_per_district = 300
move_prob_30d = 0.05
years = 1
event_files = 2
"#;

/// One-year world with a single spec and no controls, so the panel of 12
/// district-years supports the fit.
fn synth(dir: &Path) -> String {
    fs::write(dir.join("world.toml"), WORLD).unwrap();
    let world = dir.join("world");
    let o = hmig(&["synth", "--config", dir.join("world.toml").to_str().unwrap(), "--out", world.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = world.join("run.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    let text = text
        .replace("controls = true", "controls = false")
        .replace("specs = [\n    \"cultivation\",\n    \"conflict\",\n]", "specs = [\"cultivation\"]");
    assert!(text.contains("specs = [\"cultivation\"]"));
    fs::write(&cfg, text).unwrap();
    cfg.to_str().unwrap().to_string()
}

fn read_tree(root: &Path, skip: &[&str]) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if skip.iter().any(|s| rel.starts_with(s)) {
                continue;
            }
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn end_to_end_resume_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path());
    let run_dir = tmp.path().join("world/run");

    let o = hmig(&["run", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("rows kept"), "{out}");
    assert!(out.contains("high"), "{out}");
    let fingerprint = out.lines().next().unwrap().strip_prefix("fingerprint ").unwrap().to_string();

    // every final output carries the fingerprint
    for f in ["metrics.csv", "peaks.csv", "panel_in_rate.csv", "rejections.csv", "fits/in_rate_cultivation.csv"] {
        let text = fs::read_to_string(run_dir.join(f)).unwrap();
        assert!(text.contains(&fingerprint), "{f}");
    }

    // markers present: nothing is recomputed
    let before = fs::metadata(run_dir.join("metrics.csv")).unwrap().modified().unwrap();
    let o = hmig(&["run", "--config", &cfg]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("all stages complete"));
    assert!(String::from_utf8_lossy(&o.stderr).is_empty());
    assert_eq!(fs::metadata(run_dir.join("metrics.csv")).unwrap().modified().unwrap(), before);

    // restarting from a later stage reproduces identical artifacts
    let snapshot = read_tree(&run_dir, &["stages"]);
    let o = hmig(&["run", "--config", &cfg, "--stage-from", "metrics"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(!stderr.contains("[ingest]") && stderr.contains("[metrics]"));
    assert_eq!(read_tree(&run_dir, &["stages"]), snapshot);

    let o = hmig(&["figures", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let od = fs::read_to_string(run_dir.join("figures/od_matrix_2015.csv")).unwrap();
    let header = od.lines().nth(1).unwrap();
    assert_eq!(header.split(',').count(), 1 + 12);
    let series = fs::read_to_string(run_dir.join("figures/series_in_rate.csv")).unwrap();
    let rows_at_zero: usize = series
        .lines()
        .filter(|l| l.split(',').nth(1) == Some("0"))
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    let panel_rows = fs::read_to_string(run_dir.join("panel_in_rate.csv")).unwrap().lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows_at_zero, panel_rows);

    let o = hmig(&["totals", "--config", &cfg, "--coefficient", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("2015: 0 migrants"), "{}", stdout(&o));

    let o = hmig(&["placebo", "--config", &cfg, "--iterations", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let placebo = fs::read_to_string(run_dir.join("robustness/placebo.csv")).unwrap();
    assert_eq!(placebo.lines().filter(|l| !l.starts_with('#')).count(), 1 + 1 + 5);

    let o = hmig(&["robustness", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["perturbation.csv", "precision.csv", "restrictions.csv", "variants.csv"] {
        assert!(fs::read_to_string(run_dir.join("robustness").join(f)).unwrap().contains(&fingerprint));
    }
}

#[test]
fn equal_fingerprints_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path());
    let other = tmp.path().join("other.toml");
    fs::write(&other, fs::read_to_string(&cfg).unwrap().replace("output = \"run\"", "output = \"run2\"")).unwrap();
    // relative paths resolve against the config's directory
    let other_cfg = tmp.path().join("world/other.toml");
    fs::rename(&other, &other_cfg).unwrap();
    for c in [&cfg, other_cfg.to_str().unwrap()] {
        let o = hmig(&["run", "--config", c, "--shards", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = read_tree(&tmp.path().join("world/run"), &[]);
    let b = read_tree(&tmp.path().join("world/run2"), &[]);
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "output = \"x\"\nstudy_start = \"2015-01-01\"\nstudy_end = \"2015-12-31\"\nsurprise = 1\n").unwrap();
    let o = hmig(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("surprise"));

    // missing inputs are caught before any work is done
    let missing = tmp.path().join("missing.toml");
    fs::write(
        &missing,
        "output = \"out\"\nstudy_start = \"2015-01-01\"\nstudy_end = \"2015-12-31\"\n[inputs]\n\
         districts = \"d.geojson\"\ntowers = \"t.csv\"\nevents = [\"e.csv\"]\nndvi = \"n.csv\"\n\
         cultivation = \"c.csv\"\ncontrol = \"k.csv\"\nviolence = \"v.csv\"\n",
    )
    .unwrap();
    let o = hmig(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());

    let o = hmig(&["synth", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = hmig(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_one_and_leave_a_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path());
    // a corrupt NDVI file fails the phenology stage after ingest succeeded
    let ndvi = tmp.path().join("world/ndvi.csv");
    fs::write(&ndvi, "pixel_id,district_id\nnonsense\n").unwrap();
    let o = hmig(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let stages = tmp.path().join("world/run/stages");
    assert!(stages.join("metrics.done").exists());
    assert!(stages.join("phenology.failed").exists());
    assert!(!stages.join("phenology.done").exists());
}
