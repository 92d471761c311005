use std::fs;

use mfrs::baselines::ShaperKind;
use mfrs::harness::{aggregate, read_rows, run_experiment, AggregateRow, RunConfig};
use mfrs::agent::EpisodeMetrics;

fn small(shaper: ShaperKind) -> RunConfig {
    let mut cfg = RunConfig { shaper, seeds: vec![0, 1, 2, 3, 4], episodes: 6, save_networks: false, ..RunConfig::default() };
    cfg.env.horizon = 40;
    cfg.agent.batch_size = 16;
    cfg.agent.updates_per_episode = 2;
    cfg
}

#[test]
fn five_seeds_two_shapers_make_twelve_files() {
    let dir = tempfile::tempdir().unwrap();
    for shaper in [ShaperKind::Ns, ShaperKind::Mfrs] {
        let report = run_experiment(&small(shaper), dir.path()).unwrap();
        assert!(!report.diverged());
        assert_eq!(report.seed_files.len(), 5);
    }
    let files: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(files.len(), 12, "{files:?}");
    assert_eq!(files.iter().filter(|f| f.ends_with("_aggregate.csv")).count(), 2);
}

#[test]
fn repeated_runs_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small(ShaperKind::DpbaDist);
    cfg.save_networks = true;
    cfg.dump_layouts = true;
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    let mut n = 0;
    for entry in walk(a.path()) {
        let rel = entry.strip_prefix(a.path()).unwrap();
        assert_eq!(fs::read(&entry).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{}", rel.display());
        n += 1;
    }
    assert_eq!(n, walk(b.path()).len());
    assert!(n > 6);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn aggregate_file_recomputes_from_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small(ShaperKind::PbrsDist), dir.path()).unwrap();
    let runs: Vec<Vec<EpisodeMetrics>> = report.seed_files.iter().map(|f| read_rows(f).unwrap()).collect();
    let stored: Vec<AggregateRow> = read_rows(report.aggregate_file.as_ref().unwrap()).unwrap();
    assert_eq!(stored, aggregate(&runs).unwrap());
    for (row, k) in stored.iter().zip(0..) {
        let mean = runs.iter().map(|r| r[k].success as f64).sum::<f64>() / runs.len() as f64;
        assert!((row.success_mean - mean).abs() < 1e-12);
        assert!(row.success_ci_lo <= row.success_mean + 1e-12 && row.success_mean <= row.success_ci_hi + 1e-12);
    }
}

#[test]
fn metrics_respect_their_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small(ShaperKind::Mfrs), dir.path()).unwrap();
    for m in report.completed() {
        let sr = m.success_rate().unwrap();
        assert!((0.0..=1.0).contains(&sr));
        let t = m.average_timesteps().unwrap();
        assert!((1.0..=40.0).contains(&t));
    }
}
