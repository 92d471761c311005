//! Experiment orchestration: run configs, per-seed and aggregate metrics files, field
//! grids and the verification suites.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Ablations, AgentConfig, EpisodeMetrics, TrainConfig, Trainer};
use crate::baselines::ShaperKind;
use crate::env::{write_layout_rows, EnvConfig, TaskVariant, LAYOUT_HEADER};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::magnet::{field_at, FieldSettings, Magnet};
use crate::reward::{magnetic_reward, FieldStats, GoalLayout};

/// Environment variable naming the default output root.
pub const OUTPUT_DIR_ENV: &str = "MFRS_OUTPUT_DIR";
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const CI_LEVEL: f64 = 0.90;
pub const MOVING_AVERAGE_WINDOW: usize = 100;
const BOOTSTRAP_SEED: u64 = 0x5eed;

/// Everything needed to reproduce one training experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskVariant,
    pub shaper: ShaperKind,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub output_dir: Option<PathBuf>,
    /// Write the trained networks under `nets/`.
    pub save_networks: bool,
    /// Write the sampled layouts of every episode under `layouts/`.
    pub dump_layouts: bool,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub ablations: Ablations,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskVariant::II,
            shaper: ShaperKind::Mfrs,
            seeds: vec![0, 1, 2, 3, 4],
            episodes: 3000,
            output_dir: None,
            save_networks: true,
            dump_layouts: false,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            ablations: Ablations::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig { task: self.task, ..self.env.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { shaper: self.shaper, ablations: self.ablations, agent: self.agent.clone() }
    }

    /// File-name stem shared by this run's outputs.
    pub fn label(&self) -> String {
        format!("task{}_{}", self.task, self.train_config().label())
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.env_config().validate()?;
        self.train_config().validate()
    }

    /// Output directory: the config value, else `$MFRS_OUTPUT_DIR`, else `runs`.
    pub fn resolve_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

/// Episode stream of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub episodes: Vec<EpisodeMetrics>,
}

impl RunMetrics {
    pub fn success_rate(&self) -> Result<f64> {
        mean_of(self.episodes.iter().map(|m| f64::from(m.success)))
    }

    /// Success rate over the last `fraction` of the episodes (at least one).
    pub fn final_success_rate(&self, fraction: f64) -> Result<f64> {
        let n = self.episodes.len();
        let k = ((n as f64 * fraction).round() as usize).clamp(1, n.max(1));
        mean_of(self.episodes[n.saturating_sub(k)..].iter().map(|m| f64::from(m.success)))
    }

    pub fn average_timesteps(&self) -> Result<f64> {
        average_timesteps(&self.episodes)
    }
}

fn mean_of(it: impl Iterator<Item = f64>) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in it {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMetrics);
    }
    Ok(sum / n as f64)
}

/// `(1/E) Σ T_k` over the episodes.
pub fn average_timesteps(metrics: &[EpisodeMetrics]) -> Result<f64> {
    mean_of(metrics.iter().map(|m| m.timesteps as f64))
}

/// Trailing mean over at most `window` values ending at each index.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci<R: Rng + ?Sized>(values: &[f64], resamples: usize, level: f64, rng: &mut R) -> (f64, f64) {
    if values.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples).map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    let tail = (1.0 - level) / 2.0;
    (q(tail), q(1.0 - tail))
}

/// One row of the cross-seed aggregate file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub episode: usize,
    pub seeds: usize,
    pub success_mean: f64,
    pub success_ci_lo: f64,
    pub success_ci_hi: f64,
    /// Trailing mean of `success_mean` over 100 episodes.
    pub success_ma100: f64,
    pub timesteps_mean: f64,
    pub timesteps_ci_lo: f64,
    pub timesteps_ci_hi: f64,
    pub return_mean: f64,
}

/// Per-episode means and bootstrap intervals across seeds, up to the shortest stream.
pub fn aggregate(runs: &[Vec<EpisodeMetrics>]) -> Result<Vec<AggregateRow>> {
    let len = runs.iter().map(Vec::len).min().ok_or(Error::EmptyMetrics)?;
    if len == 0 {
        return Err(Error::EmptyMetrics);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let n = runs.len() as f64;
    let mut rows = Vec::with_capacity(len);
    for e in 0..len {
        let success: Vec<f64> = runs.iter().map(|r| f64::from(r[e].success)).collect();
        let steps: Vec<f64> = runs.iter().map(|r| r[e].timesteps as f64).collect();
        let (s_lo, s_hi) = bootstrap_ci(&success, BOOTSTRAP_RESAMPLES, CI_LEVEL, &mut rng);
        let (t_lo, t_hi) = bootstrap_ci(&steps, BOOTSTRAP_RESAMPLES, CI_LEVEL, &mut rng);
        rows.push(AggregateRow {
            episode: runs[0][e].episode,
            seeds: runs.len(),
            success_mean: success.iter().sum::<f64>() / n,
            success_ci_lo: s_lo,
            success_ci_hi: s_hi,
            success_ma100: 0.0,
            timesteps_mean: steps.iter().sum::<f64>() / n,
            timesteps_ci_lo: t_lo,
            timesteps_ci_hi: t_hi,
            return_mean: runs.iter().map(|r| r[e].ret).sum::<f64>() / n,
        });
    }
    let means: Vec<f64> = rows.iter().map(|r| r.success_mean).collect();
    for (row, ma) in rows.iter_mut().zip(moving_average(&means, MOVING_AVERAGE_WINDOW)) {
        row.success_ma100 = ma;
    }
    Ok(rows)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Result of one seed; `error` is set when training stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub metrics: RunMetrics,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub label: String,
    pub outcomes: Vec<SeedOutcome>,
    pub seed_files: Vec<PathBuf>,
    pub aggregate_file: Option<PathBuf>,
}

impl ExperimentReport {
    pub fn diverged(&self) -> bool {
        self.outcomes.iter().any(|o| o.error.is_some())
    }

    /// Seeds that finished every episode.
    pub fn completed(&self) -> impl Iterator<Item = &RunMetrics> {
        self.outcomes.iter().filter(|o| o.error.is_none()).map(|o| &o.metrics)
    }

    /// Mean over completed seeds of the final-window success rate.
    pub fn mean_final_success(&self, fraction: f64) -> Result<f64> {
        mean_of(self.completed().map(|m| m.final_success_rate(fraction)).collect::<Result<Vec<_>>>()?.into_iter())
    }

    pub fn mean_average_timesteps(&self) -> Result<f64> {
        mean_of(self.completed().map(|m| m.average_timesteps()).collect::<Result<Vec<_>>>()?.into_iter())
    }
}

pub fn seed_file(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("{label}_seed{seed}.csv"))
}

pub fn aggregate_file(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("{label}_aggregate.csv"))
}

/// Trains one seed. Errors stop the seed and are returned alongside the episodes done so far.
pub fn run_seed(cfg: &RunConfig, seed: u64, out_dir: Option<&Path>) -> SeedOutcome {
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut layouts = Vec::new();
    let result = (|| -> Result<()> {
        let mut trainer = Trainer::new(cfg.env_config(), cfg.train_config(), seed)?;
        for _ in 0..cfg.episodes {
            episodes.push(trainer.run_episode(&mut |_| {})?);
            if cfg.dump_layouts {
                layouts.push(trainer.env().layout().clone());
            }
        }
        if let Some(dir) = out_dir {
            let label = cfg.label();
            if cfg.save_networks {
                let nets = dir.join("nets");
                fs::create_dir_all(&nets)?;
                trainer.nets().actor.save(&nets.join(format!("{label}_seed{seed}_actor.json")))?;
                trainer.nets().critic.save(&nets.join(format!("{label}_seed{seed}_critic.json")))?;
                if let Some(p) = trainer.potential() {
                    p.net().save(&nets.join(format!("{label}_seed{seed}_potential.json")))?;
                }
            }
            if cfg.dump_layouts {
                let ldir = dir.join("layouts");
                fs::create_dir_all(&ldir)?;
                let mut w = csv::Writer::from_path(ldir.join(format!("{label}_seed{seed}.csv")))?;
                w.write_record(LAYOUT_HEADER)?;
                for (e, l) in layouts.iter().enumerate() {
                    write_layout_rows(&mut w, e, l)?;
                }
                w.flush()?;
            }
        }
        Ok(())
    })();
    SeedOutcome { metrics: RunMetrics { seed, episodes }, error: result.err().map(|e| e.to_string()) }
}

/// Trains every seed (in parallel), writes one CSV per seed and an aggregate CSV over the
/// seeds that completed.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let label = cfg.label();
    let outcomes: Vec<SeedOutcome> = cfg.seeds.par_iter().map(|&seed| run_seed(cfg, seed, Some(out_dir))).collect();
    let mut seed_files = Vec::new();
    for o in &outcomes {
        let path = seed_file(out_dir, &label, o.metrics.seed);
        write_rows(&path, &o.metrics.episodes)?;
        seed_files.push(path);
    }
    let done: Vec<Vec<EpisodeMetrics>> = outcomes.iter().filter(|o| o.error.is_none()).map(|o| o.metrics.episodes.clone()).collect();
    let aggregate_file = if done.is_empty() {
        None
    } else {
        let path = aggregate_file(out_dir, &label);
        write_rows(&path, &aggregate(&done)?)?;
        Some(path)
    };
    Ok(ExperimentReport { label, outcomes, seed_files, aggregate_file })
}

/// Rebuilds the aggregate rows from per-seed files.
pub fn aggregate_from_files(paths: &[PathBuf]) -> Result<Vec<AggregateRow>> {
    let runs = paths.iter().map(|p| read_rows::<EpisodeMetrics>(p)).collect::<Result<Vec<_>>>()?;
    aggregate(&runs)
}

/// Axis-aligned grid of `counts[i]` points per axis spanning `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub counts: [usize; 3],
}

impl Lattice {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if self.counts[i] == 0 || !self.min[i].is_finite() || !self.max[i].is_finite() || self.min[i] > self.max[i] {
                return Err(Error::InvalidArgument(format!("bad lattice axis {i}: {self:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        if self.counts[axis] == 1 {
            return self.min[axis];
        }
        self.min[axis] + (self.max[axis] - self.min[axis]) * i as f64 / (self.counts[axis] - 1) as f64
    }

    /// Points in row-major order: x slowest, z fastest.
    pub fn points(&self) -> impl Iterator<Item = Vec3> + '_ {
        let [nx, ny, nz] = self.counts;
        (0..nx).flat_map(move |i| {
            (0..ny).flat_map(move |j| (0..nz).map(move |k| Vec3::new(self.coord(0, i), self.coord(1, j), self.coord(2, k))))
        })
    }
}

/// Writes `x,y,z,H` with `H` the norm of the superposed field of `magnets`.
pub fn dump_field_grid<W: Write>(magnets: &[Magnet], lattice: &Lattice, settings: &FieldSettings, out: W) -> Result<()> {
    lattice.validate()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "z", "H"])?;
    for p in lattice.points() {
        let mut h = Vec3::ZERO;
        for m in magnets {
            h += field_at(m, p, settings)?;
        }
        w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string(), h.norm().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x,y,z,Rm`, the magnetic reward under fixed `stats`.
pub fn dump_reward_grid<W: Write>(layout: &GoalLayout, stats: &FieldStats, lattice: &Lattice, settings: &FieldSettings, out: W) -> Result<()> {
    lattice.validate()?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "z", "Rm"])?;
    for p in lattice.points() {
        let r = magnetic_reward(p, layout, stats, settings)?.reward;
        w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Field statistics estimated from the intensities over a lattice, for reward maps.
pub fn grid_stats(layout: &GoalLayout, lattice: &Lattice, settings: &FieldSettings) -> Result<FieldStats> {
    let mut stats = FieldStats::new(layout.obstacles.len(), lattice.len().max(1));
    let fresh = FieldStats::new(layout.obstacles.len(), 1);
    for p in lattice.points() {
        stats.record(&magnetic_reward(p, layout, &fresh, settings)?);
    }
    stats.update_stats();
    Ok(stats)
}

pub use crate::verify::{verify, PropertyResult, Suite, VerifyReport};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MagnetPose;
    use crate::magnet::{axial_sphere_intensity, SphericalMagnet};

    fn metrics(t: &[usize]) -> Vec<EpisodeMetrics> {
        t.iter()
            .enumerate()
            .map(|(i, &t)| EpisodeMetrics { episode: i, success: (t < 200) as u8, timesteps: t, ret: -(t as f64), critic_loss: 0.0, actor_obj: 0.0, phi_loss: 0.0 })
            .collect()
    }

    #[test]
    fn average_timesteps_examples() {
        assert_eq!(average_timesteps(&metrics(&[1000, 1000])).unwrap(), 1000.0);
        assert_eq!(average_timesteps(&metrics(&[100, 300])).unwrap(), 200.0);
        assert_eq!(average_timesteps(&metrics(&[1, 1, 1])).unwrap(), 1.0);
        assert!(matches!(average_timesteps(&[]), Err(Error::EmptyMetrics)));
    }

    #[test]
    fn moving_average_is_trailing() {
        assert_eq!(moving_average(&[1.0, 0.0, 1.0, 1.0], 2), vec![1.0, 0.5, 0.5, 1.0]);
        assert_eq!(moving_average(&[], 3), Vec::<f64>::new());
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean() {
        let v = [0.0, 1.0, 1.0, 0.0, 1.0];
        let (lo, hi) = bootstrap_ci(&v, 1000, 0.9, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(lo <= 0.6 && 0.6 <= hi && lo >= 0.0 && hi <= 1.0);
        let (lo, hi) = bootstrap_ci(&[2.0; 4], 100, 0.9, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!((lo, hi), (2.0, 2.0));
    }

    #[test]
    fn final_window_rates() {
        let m = RunMetrics { seed: 0, episodes: metrics(&[200, 200, 200, 200, 200, 200, 200, 200, 10, 10]) };
        assert_eq!(m.final_success_rate(0.1).unwrap(), 1.0);
        assert_eq!(m.final_success_rate(0.2).unwrap(), 1.0);
        assert_eq!(m.success_rate().unwrap(), 0.2);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = RunConfig::from_toml_str("task = \"IV\"\nshaper = \"pbrs_dist\"\nseeds = [3]\n[agent]\nhidden = [8]\n").unwrap();
        assert_eq!((partial.task, partial.shaper, partial.seeds.clone()), (TaskVariant::IV, ShaperKind::PbrsDist, vec![3]));
        assert_eq!(partial.agent.batch_size, 128);
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig { episodes: 0, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { seeds: vec![], ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { seeds: vec![1, 1], ..RunConfig::default() }.validate().is_err());
        assert_eq!(RunConfig::default().label(), "taskII_mfrs");
    }

    #[test]
    fn lattice_is_row_major_and_complete() {
        let l = Lattice { min: [0.0, 0.0, 0.0], max: [1.0, 2.0, 3.0], counts: [2, 3, 4] };
        let pts: Vec<Vec3> = l.points().collect();
        assert_eq!(pts.len(), 24);
        assert_eq!(pts[1], Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(pts[4], Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(pts[12], Vec3::new(1.0, 0.0, 0.0));
        assert!(Lattice { counts: [0, 1, 1], ..l }.validate().is_err());
    }

    #[test]
    fn empty_magnet_list_gives_zero_field() {
        let l = Lattice { min: [-1.0; 3], max: [1.0; 3], counts: [3, 3, 3] };
        let mut buf = Vec::new();
        dump_field_grid(&[], &l, &FieldSettings::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,z,H"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 27);
        assert!(rows.iter().all(|r| r.ends_with(",0")));
    }

    #[test]
    fn axial_line_matches_closed_form() {
        let m = SphericalMagnet::new(0.02, crate::magnet::DEFAULT_MAGNETIZATION, MagnetPose::IDENTITY).unwrap();
        let l = Lattice { min: [0.0, 0.0, 0.03], max: [0.0, 0.0, 0.08], counts: [1, 1, 6] };
        let mut buf = Vec::new();
        dump_field_grid(&[Magnet::Sphere(m)], &l, &FieldSettings::with_nodes(64).unwrap(), &mut buf).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        for row in r.records() {
            let row = row.unwrap();
            let z: f64 = row[2].parse().unwrap();
            let h: f64 = row[3].parse().unwrap();
            let exact = axial_sphere_intensity(&m, z);
            assert!((h - exact).abs() / exact < 2e-2, "z {z}: {h} vs {exact}");
        }
    }

    #[test]
    fn aggregate_recomputes_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let runs = vec![metrics(&[200, 50, 30]), metrics(&[200, 200, 20]), metrics(&[10, 20, 30])];
        let mut paths = Vec::new();
        for (i, r) in runs.iter().enumerate() {
            let p = seed_file(dir.path(), "x", i as u64);
            write_rows(&p, r).unwrap();
            paths.push(p);
        }
        let direct = aggregate(&runs).unwrap();
        let written = aggregate_file(dir.path(), "x");
        write_rows(&written, &direct).unwrap();
        assert_eq!(read_rows::<AggregateRow>(&written).unwrap(), aggregate_from_files(&paths).unwrap());
        assert_eq!(direct[0].success_mean, 1.0 / 3.0);
        assert_eq!(direct[2].timesteps_mean, 80.0 / 3.0);
    }
}
