//! Experiment orchestration: configuration, training, localization over a
//! test grid, environment sweeps and report files.
//!
//! # Config file
//!
//! A flat TOML table. Every key is optional and defaults to the desk-scale
//! experiment. Unknown keys are rejected.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `room_x`, `room_y`, `room_z` | 4.0 | room size (m) |
//! | `sound_speed` | 343.0 | m/s |
//! | `sample_rate` | 8000 | Hz |
//! | `mic_positions` | six-mic cross | array of `[x, y, z]` |
//! | `cluster_size` | 0.5 | cluster edge (m), 0.25 with `--paper-scale` |
//! | `samples_per_cluster` | 1 | training captures per cluster |
//! | `train_t60`, `train_snr_db` | 0.0, 10.0 | training environment |
//! | `test_t60`, `test_snr_db` | 0.0, 10.0 | test environment |
//! | `interpolation` | `"sinc"` | `"nearest"` or `"sinc"` |
//! | `max_order` | none | image order cap |
//! | `frame_len`, `overlap`, `window` | 512, 0.625, `"hann"` | framing |
//! | `gamma`, `lags_per_pair`, `lag_mode` | 2.0, 16, `"centered"` | features |
//! | `sigma`, `kernel_scale` | 5.0, `"unit"` | PNN |
//! | `thr`, `zeta_max`, `lambda`, `rho`, `dist_floor` | 16.384/K, 3 (15 with `--paper-scale`), 0.25, 0.25, 1e-6 | refinement |
//! | `source` | `"synth"` | `"synth"` or a mono WAV path |
//! | `source_duration` | 1.0 | synthetic clip length (s) |
//! | `radii`, `n_azimuth`, `azimuth_min`, `azimuth_max` | [0.5, 1.0, 1.5], 21, -160, 160 | test grid |
//! | `n_elevation`, `elevation_min`, `elevation_max` | 9, -60, 60 | test grid |
//! | `seed` | 1 | master seed |
//! | `workers` | 0 | worker threads, 0 = all cores |
//! | `sweep_t60` | [0.0, 0.1, 0.2, 0.4, 0.6] | sweep T60 list |
//! | `sweep_snr_db` | [-10.0, -5.0, 0.0, 10.0] | sweep SNR list |
//! | `sweep_mode` | `"matched"` | `"matched"` or `"fixed-train"` |

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, synth_speechband, Signal};
use crate::error::{Error, Result};
use crate::features::{gcc_feature, FeatureSpec, FrameSpec, GccFeature, LagMode, Window};
use crate::geometry::{
    distance, make_cluster_grid, test_grid, ClusterGrid, Doa, MicArray, RoomSpec, TestGridSpec, Vec3,
};
use crate::metrics::{EnvTags, Report, TestOutcome};
use crate::pnn::{self, KernelScale, ModelMeta, PnnModel};
use crate::room::{capture_source, AcousticEnv, Interpolation};
use crate::wldm::{localize, WldmConfig};

pub const DESK_CLUSTER_SIZE: f64 = 0.5;
pub const PAPER_CLUSTER_SIZE: f64 = 0.25;
/// Selection cap for 0.5 m clusters, which are eight times the volume of
/// the 0.25 m clusters the 15-cluster cap was chosen for.
pub const DESK_ZETA_MAX: usize = 3;
/// Training draws closer than this to a microphone are redrawn.
pub const MIN_MIC_CLEARANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// One model per cell, trained in the cell's environment.
    #[default]
    Matched,
    /// A single model trained in the configured training environment.
    FixedTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub room_x: f64,
    pub room_y: f64,
    pub room_z: f64,
    pub sound_speed: f64,
    pub sample_rate: u32,
    pub mic_positions: Option<Vec<Vec3>>,
    pub cluster_size: f64,
    pub samples_per_cluster: usize,
    pub train_t60: f64,
    pub train_snr_db: f64,
    pub test_t60: f64,
    pub test_snr_db: f64,
    pub interpolation: Interpolation,
    pub max_order: Option<u32>,
    pub frame_len: usize,
    pub overlap: f64,
    pub window: Window,
    pub gamma: f64,
    pub lags_per_pair: usize,
    pub lag_mode: LagMode,
    pub sigma: f64,
    pub kernel_scale: KernelScale,
    pub thr: Option<f64>,
    pub zeta_max: usize,
    pub lambda: f64,
    pub rho: f64,
    pub dist_floor: f64,
    pub source: String,
    pub source_duration: f64,
    pub radii: Vec<f64>,
    pub n_azimuth: usize,
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub n_elevation: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub seed: u64,
    pub workers: usize,
    pub sweep_t60: Vec<f64>,
    pub sweep_snr_db: Vec<f64>,
    pub sweep_mode: SweepMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let frame = FrameSpec::default();
        let feature = FeatureSpec::default();
        let wldm = WldmConfig::default();
        let grid = TestGridSpec::default();
        ExperimentConfig {
            room_x: 4.0,
            room_y: 4.0,
            room_z: 4.0,
            sound_speed: RoomSpec::DEFAULT_SOUND_SPEED,
            sample_rate: RoomSpec::DEFAULT_SAMPLE_RATE,
            mic_positions: None,
            cluster_size: DESK_CLUSTER_SIZE,
            samples_per_cluster: 1,
            train_t60: 0.0,
            train_snr_db: 10.0,
            test_t60: 0.0,
            test_snr_db: 10.0,
            interpolation: Interpolation::Sinc,
            max_order: None,
            frame_len: frame.frame_len,
            overlap: frame.overlap,
            window: frame.window,
            gamma: feature.gamma,
            lags_per_pair: feature.lags_per_pair,
            lag_mode: feature.lag_mode,
            sigma: pnn::DEFAULT_SIGMA,
            kernel_scale: KernelScale::Unit,
            thr: wldm.thr,
            zeta_max: DESK_ZETA_MAX,
            lambda: wldm.lambda,
            rho: wldm.rho,
            dist_floor: wldm.dist_floor,
            source: "synth".to_string(),
            source_duration: 1.0,
            radii: grid.radii,
            n_azimuth: grid.n_azimuth,
            azimuth_min: grid.azimuth_span.0,
            azimuth_max: grid.azimuth_span.1,
            n_elevation: grid.n_elevation,
            elevation_min: grid.elevation_span.0,
            elevation_max: grid.elevation_span.1,
            seed: 1,
            workers: 0,
            sweep_t60: vec![0.0, 0.1, 0.2, 0.4, 0.6],
            sweep_snr_db: vec![-10.0, -5.0, 0.0, 10.0],
            sweep_mode: SweepMode::Matched,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    /// Parses a config file body, then applies `key=value` overrides whose
    /// values use TOML syntax (`test_snr_db=-5`, `source="a.wav"`).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let parsed: toml::Table = format!("v = {}", value.trim())
                .parse()
                .or_else(|_| format!("v = {:?}", value.trim()).parse())
                .map_err(config_err)?;
            table.insert(key.trim().to_string(), parsed["v"].clone());
        }
        let cfg: ExperimentConfig = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Error::from(e).context(format!("reading config {}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides that switch to 0.25 m clusters with the full selection cap.
    pub fn paper_scale_overrides() -> Vec<String> {
        vec![
            format!("cluster_size={PAPER_CLUSTER_SIZE}"),
            format!("zeta_max={}", WldmConfig::default().zeta_max),
        ]
    }

    pub fn paper_scale(mut self) -> Self {
        self.cluster_size = PAPER_CLUSTER_SIZE;
        self.zeta_max = WldmConfig::default().zeta_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let room = self.room()?;
        self.array(&room)?;
        self.grid(&room)?;
        self.train_env().validate()?;
        self.test_env().validate()?;
        self.feature_spec().validate()?;
        self.wldm().validate()?;
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if self.source != "synth" && !Path::new(&self.source).exists() {
            return Err(Error::Config(format!("source file {} not found", self.source)));
        }
        if !(self.source_duration.is_finite() && self.source_duration > 0.0) {
            return Err(Error::Config("source_duration must be positive".into()));
        }
        if self.test_grid_spec().is_empty() {
            return Err(Error::Config("test grid is empty".into()));
        }
        Ok(())
    }

    pub fn room(&self) -> Result<RoomSpec> {
        RoomSpec::new([self.room_x, self.room_y, self.room_z], self.sound_speed, self.sample_rate)
    }

    pub fn array(&self, room: &RoomSpec) -> Result<MicArray> {
        match &self.mic_positions {
            Some(p) => MicArray::new(p.clone(), room),
            None => MicArray::six_mic_cross(room),
        }
    }

    pub fn grid(&self, room: &RoomSpec) -> Result<ClusterGrid> {
        make_cluster_grid(room, [self.cluster_size; 3])
    }

    fn env(&self, t60: f64, snr_db: f64) -> AcousticEnv {
        AcousticEnv {
            interpolation: self.interpolation,
            max_order: self.max_order,
            ..AcousticEnv::new(t60, snr_db)
        }
    }

    pub fn train_env(&self) -> AcousticEnv {
        self.env(self.train_t60, self.train_snr_db)
    }

    pub fn test_env(&self) -> AcousticEnv {
        self.env(self.test_t60, self.test_snr_db)
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec {
            frame: FrameSpec {
                frame_len: self.frame_len,
                overlap: self.overlap,
                window: self.window,
            },
            gamma: self.gamma,
            lags_per_pair: self.lags_per_pair,
            lag_mode: self.lag_mode,
        }
    }

    pub fn wldm(&self) -> WldmConfig {
        WldmConfig {
            thr: self.thr,
            zeta_max: self.zeta_max,
            lambda: self.lambda,
            rho: self.rho,
            dist_floor: self.dist_floor,
        }
    }

    pub fn test_grid_spec(&self) -> TestGridSpec {
        TestGridSpec {
            radii: self.radii.clone(),
            n_azimuth: self.n_azimuth,
            azimuth_span: (self.azimuth_min, self.azimuth_max),
            n_elevation: self.n_elevation,
            elevation_span: (self.elevation_min, self.elevation_max),
        }
    }

    pub fn source_name(&self) -> String {
        if self.source == "synth" {
            "synth".to_string()
        } else {
            Path::new(&self.source)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.source.clone())
        }
    }

    pub fn source_signal(&self) -> Result<Signal> {
        if self.source == "synth" {
            synth_speechband(
                self.source_duration,
                self.sample_rate,
                derive_seed(self.seed, Domain::Source, 0),
            )
        } else {
            load_wav(&self.source, self.sample_rate)
                .map_err(|e| e.context(format!("source {}", self.source)))
        }
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
}

/// Independent random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source = 1,
    TrainPosition = 2,
    TrainNoise = 3,
    TestNoise = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ domain as u64) ^ index)
}

/// Per-cluster training sample counts, with positions drawn uniformly inside
/// each cluster from a seeded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub samples_per_cluster: Vec<usize>,
    pub seed: u64,
}

impl TrainingPlan {
    pub fn uniform(k: usize, n: usize, seed: u64) -> Self {
        TrainingPlan {
            samples_per_cluster: vec![n; k],
            seed,
        }
    }

    /// `(cluster, sample)` pairs in cluster-major order.
    pub fn items(&self) -> Vec<(usize, usize)> {
        self.samples_per_cluster
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |j| (c, j)))
            .collect()
    }

    fn item_index(&self, cluster: usize, sample: usize) -> u64 {
        ((cluster as u64) << 32) | sample as u64
    }

    /// Source position for one training sample. Draws too close to a
    /// microphone are rejected.
    pub fn position(&self, grid: &ClusterGrid, array: &MicArray, cluster: usize, sample: usize) -> Result<Vec3> {
        let v = grid.vertexes_of(cluster)?;
        let (lo, hi) = (v[0], v[7]);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            Domain::TrainPosition,
            self.item_index(cluster, sample),
        ));
        for _ in 0..1000 {
            let p: Vec3 = std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * rng.random::<f64>());
            if array
                .positions()
                .iter()
                .all(|m| distance(*m, p) >= MIN_MIC_CLEARANCE)
            {
                return Ok(p);
            }
        }
        Err(Error::invalid("training plan", format!("cluster {cluster} is filled by microphones")))
    }

    pub fn noise_seed(&self, cluster: usize, sample: usize) -> u64 {
        derive_seed(self.seed, Domain::TrainNoise, self.item_index(cluster, sample))
    }
}

/// Busy time summed over work items, per phase, plus totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub simulate_s: f64,
    pub feature_s: f64,
    pub decide_s: f64,
    pub store_s: f64,
    pub wall_s: f64,
    pub cpu_s: f64,
    pub items: usize,
}

/// User plus system CPU time of this process.
pub fn process_cpu_seconds() -> f64 {
    let mut usage = std::mem::MaybeUninit::<libc::rusage>::zeroed();
    // SAFETY: getrusage fills the struct it is given.
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, usage.as_mut_ptr()) };
    if rc != 0 {
        return 0.0;
    }
    // SAFETY: rc == 0 means the struct was written.
    let u = unsafe { usage.assume_init() };
    let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
    tv(u.ru_utime) + tv(u.ru_stime)
}

struct Clock {
    wall: Instant,
    cpu: f64,
}

impl Clock {
    fn start() -> Self {
        Clock {
            wall: Instant::now(),
            cpu: process_cpu_seconds(),
        }
    }

    fn finish(&self, t: &mut PhaseTimings) {
        t.wall_s = self.wall.elapsed().as_secs_f64();
        t.cpu_s = process_cpu_seconds() - self.cpu;
    }
}

/// Builds the training set and stores it in a model.
pub fn train_pipeline(cfg: &ExperimentConfig) -> Result<(PnnModel, PhaseTimings)> {
    let signal = cfg.source_signal()?;
    train_with_signal(cfg, &cfg.train_env(), &signal)
}

fn train_with_signal(cfg: &ExperimentConfig, env: &AcousticEnv, signal: &Signal) -> Result<(PnnModel, PhaseTimings)> {
    let clock = Clock::start();
    let room = cfg.room()?;
    let array = cfg.array(&room)?;
    let grid = cfg.grid(&room)?;
    let spec = cfg.feature_spec();
    let plan = TrainingPlan::uniform(grid.k(), cfg.samples_per_cluster, cfg.seed);
    let items = plan.items();

    let work = |&(cluster, sample): &(usize, usize)| -> Result<(GccFeature, usize, f64, f64)> {
        let stage = || -> Result<(GccFeature, f64, f64)> {
            let t0 = Instant::now();
            let p = plan.position(&grid, &array, cluster, sample)?;
            let env = env.with_seed(plan.noise_seed(cluster, sample));
            let capture = capture_source(&room, &array, &env, p, signal)?;
            let t1 = Instant::now();
            let g = gcc_feature(&capture, &spec)?;
            Ok((g, (t1 - t0).as_secs_f64(), t1.elapsed().as_secs_f64()))
        };
        let (g, sim, feat) =
            stage().map_err(|e| e.context(format!("training cluster {cluster} sample {sample}")))?;
        Ok((g, cluster, sim, feat))
    };
    let results: Vec<_> = cfg
        .thread_pool()?
        .install(|| items.par_iter().map(work).collect::<Result<Vec<_>>>())?;

    let mut timings = PhaseTimings {
        items: results.len(),
        ..Default::default()
    };
    let mut features = Vec::with_capacity(results.len());
    let mut labels = Vec::with_capacity(results.len());
    for (g, label, sim, feat) in results {
        timings.simulate_s += sim;
        timings.feature_s += feat;
        features.push(g);
        labels.push(label);
    }
    let t = Instant::now();
    let meta = ModelMeta {
        room,
        mic_positions: array.positions().to_vec(),
        feature: spec,
    };
    let mut model = pnn::train(&features, &labels, cfg.sigma, &grid, meta)?;
    model.set_kernel_scale(cfg.kernel_scale);
    timings.store_s = t.elapsed().as_secs_f64();
    clock.finish(&mut timings);
    Ok((model, timings))
}

/// Checks that the model was built for the configured room, array and
/// features.
pub fn check_model(model: &PnnModel, cfg: &ExperimentConfig) -> Result<()> {
    let h = model.header();
    let room = cfg.room()?;
    let array = cfg.array(&room)?;
    let mismatch = |field: &'static str, model: String, input: String| {
        Err(Error::ModelMismatch { field, model, input })
    };
    if h.room != room {
        return mismatch("room", format!("{:?}", h.room), format!("{room:?}"));
    }
    if h.mic_positions != array.positions() {
        return mismatch(
            "microphone positions",
            format!("{:?}", h.mic_positions),
            format!("{:?}", array.positions()),
        );
    }
    if h.feature != cfg.feature_spec() {
        return mismatch("feature spec", format!("{:?}", h.feature), format!("{:?}", cfg.feature_spec()));
    }
    Ok(())
}

fn env_tags(cfg: &ExperimentConfig, model: &PnnModel, train: &AcousticEnv, test: &AcousticEnv) -> EnvTags {
    EnvTags {
        source: cfg.source_name(),
        k: model.num_clusters(),
        train_t60: train.t60,
        train_snr_db: train.snr_db,
        test_t60: test.t60,
        test_snr_db: test.snr_db,
    }
}

/// Localizes every test-grid position under the configured test
/// environment.
pub fn localize_pipeline(model: &PnnModel, cfg: &ExperimentConfig) -> Result<(Report, PhaseTimings)> {
    let signal = cfg.source_signal()?;
    localize_with_signal(model, cfg, &cfg.train_env(), &cfg.test_env(), &signal)
}

fn localize_with_signal(
    model: &PnnModel,
    cfg: &ExperimentConfig,
    train_env: &AcousticEnv,
    test_env: &AcousticEnv,
    signal: &Signal,
) -> Result<(Report, PhaseTimings)> {
    check_model(model, cfg)?;
    let clock = Clock::start();
    let room = cfg.room()?;
    let array = cfg.array(&room)?;
    let positions = test_grid(&cfg.test_grid_spec(), array.center(), &room)?;
    let wldm = cfg.wldm();
    let grid = model.grid();

    let work = |(i, (p, doa)): (usize, &(Vec3, Doa))| -> Result<(TestOutcome, f64, f64)> {
        let stage = || -> Result<(TestOutcome, f64, f64)> {
            let t0 = Instant::now();
            let env = test_env.with_seed(derive_seed(cfg.seed, Domain::TestNoise, i as u64));
            let capture = capture_source(&room, &array, &env, *p, signal)?;
            let t1 = Instant::now();
            let r = localize(model, &capture, &wldm)?;
            let outcome = TestOutcome::new(*p, *doa, r.position, r.doa, grid)?;
            Ok((outcome, (t1 - t0).as_secs_f64(), t1.elapsed().as_secs_f64()))
        };
        stage().map_err(|e| e.context(format!("test position {i}")))
    };
    let results: Vec<_> = cfg.thread_pool()?.install(|| {
        positions
            .par_iter()
            .enumerate()
            .map(work)
            .collect::<Result<Vec<_>>>()
    })?;

    let mut timings = PhaseTimings {
        items: results.len(),
        ..Default::default()
    };
    let mut outcomes = Vec::with_capacity(results.len());
    for (o, sim, dec) in results {
        timings.simulate_s += sim;
        timings.decide_s += dec;
        outcomes.push(o);
    }
    let report = Report::from_outcomes(env_tags(cfg, model, train_env, test_env), outcomes, grid)?;
    clock.finish(&mut timings);
    Ok((report, timings))
}

/// One evaluated environment of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub t60: f64,
    pub snr_db: f64,
    pub report: Report,
    pub timings: PhaseTimings,
}

/// Evaluates the cartesian product of `sweep_t60 x sweep_snr_db` (T60
/// outer). Matched mode trains one model per cell; fixed-train mode reuses
/// a single model trained in the configured training environment.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    let signal = cfg.source_signal()?;
    let fixed = match cfg.sweep_mode {
        SweepMode::FixedTrain => Some(train_with_signal(cfg, &cfg.train_env(), &signal)?),
        SweepMode::Matched => None,
    };
    let mut cells = Vec::new();
    for &t60 in &cfg.sweep_t60 {
        for &snr_db in &cfg.sweep_snr_db {
            let test_env = cfg.env(t60, snr_db);
            let cell = || -> Result<SweepCell> {
                let (report, mut timings) = match &fixed {
                    Some((model, _)) => localize_with_signal(model, cfg, &cfg.train_env(), &test_env, &signal)?,
                    None => {
                        let (model, tt) = train_with_signal(cfg, &test_env, &signal)?;
                        let (report, mut lt) = localize_with_signal(&model, cfg, &test_env, &test_env, &signal)?;
                        lt.simulate_s += tt.simulate_s;
                        lt.feature_s += tt.feature_s;
                        lt.store_s += tt.store_s;
                        lt.wall_s += tt.wall_s;
                        lt.cpu_s += tt.cpu_s;
                        (report, lt)
                    }
                };
                timings.items = report.positions;
                Ok(SweepCell {
                    t60,
                    snr_db,
                    report,
                    timings,
                })
            };
            cells.push(cell().map_err(|e| e.context(format!("sweep cell T60={t60} SNR={snr_db}")))?);
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Writes one report. CSV produces `<stem>.csv` and `<stem>_outcomes.csv`;
/// JSON produces `<stem>.json`.
pub fn write_report(report: &Report, dir: &Path, stem: &str, format: OutputFormat) -> Result<Vec<PathBuf>> {
    match format {
        OutputFormat::Csv => {
            let mut summary = Vec::new();
            Report::write_summary_csv(std::slice::from_ref(report), &mut summary)?;
            let mut outcomes = Vec::new();
            report.write_outcomes_csv(&mut outcomes)?;
            let a = dir.join(format!("{stem}.csv"));
            let b = dir.join(format!("{stem}_outcomes.csv"));
            write_atomic(&a, &summary)?;
            write_atomic(&b, &outcomes)?;
            Ok(vec![a, b])
        }
        OutputFormat::Json => {
            let p = dir.join(format!("{stem}.json"));
            write_atomic(&p, &json_bytes(report)?)?;
            Ok(vec![p])
        }
    }
}

pub fn write_timings(timings: &PhaseTimings, dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    write_atomic(&p, &json_bytes(timings)?)?;
    Ok(p)
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

pub fn cell_stem(t60: f64, snr_db: f64) -> String {
    format!("cell_t60-{}_snr-{}", fmt_num(t60), fmt_num(snr_db))
}

/// Summary metrics as rows against environment columns, T60 outer.
pub fn write_matrix_csv(cells: &[SweepCell], w: impl std::io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["metric".to_string()];
    header.extend(
        cells
            .iter()
            .map(|c| format!("t60={} snr={}", fmt_num(c.t60), fmt_num(c.snr_db))),
    );
    csv.write_record(&header)?;
    if let Some(first) = cells.first() {
        let names: Vec<String> = first.report.metric_rows().into_iter().map(|r| r.0).collect();
        for (i, name) in names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(cells.iter().map(|c| {
                let (_, value, percent) = &c.report.metric_rows()[i];
                match percent {
                    Some(p) => format!("{p:.1}"),
                    None => value.to_string(),
                }
            }));
            csv.write_record(&row)?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Writes every cell plus `matrix.csv` (and `matrix.json` in JSON mode).
pub fn write_sweep(cells: &[SweepCell], dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for c in cells {
        written.extend(write_report(&c.report, dir, &cell_stem(c.t60, c.snr_db), format)?);
    }
    let mut matrix = Vec::new();
    write_matrix_csv(cells, &mut matrix)?;
    let p = dir.join("matrix.csv");
    write_atomic(&p, &matrix)?;
    written.push(p);
    if format == OutputFormat::Json {
        let reports: Vec<&Report> = cells.iter().map(|c| &c.report).collect();
        let p = dir.join("matrix.json");
        write_atomic(&p, &json_bytes(&reports)?)?;
        written.push(p);
    }
    let timings: Vec<_> = cells
        .iter()
        .map(|c| (cell_stem(c.t60, c.snr_db), c.timings.clone()))
        .collect();
    let p = dir.join("timings.json");
    write_atomic(&p, &json_bytes(&timings)?)?;
    written.push(p);
    Ok(written)
}

/// Gnuplot-ready whitespace-separated data from a set of reports:
/// `srde.dat` (one line per environment) and `errors.dat` (one line per
/// test position, blank line between environments).
pub fn write_plot_data(reports: &[Report], dir: &Path) -> Result<Vec<PathBuf>> {
    use std::fmt::Write as _;
    let mut srde = String::from("# test_t60 test_snr_db srde10 srde20 srde30 phi_mean theta_mean eps_mean\n");
    let mut errors = String::from("# truth_theta truth_phi phi_err theta_err eps\n");
    for r in reports {
        let t = &r.tags;
        let pct = |a: f64| r.srde_at(a).map(|f| 100.0 * f).unwrap_or(f64::NAN);
        let _ = writeln!(
            srde,
            "{} {} {} {} {} {} {} {}",
            fmt_num(t.test_t60),
            fmt_num(t.test_snr_db),
            pct(10.0),
            pct(20.0),
            pct(30.0),
            r.phi_mean,
            r.theta_mean,
            r.eps_mean
        );
        let _ = writeln!(errors, "# test_t60={} test_snr_db={}", fmt_num(t.test_t60), fmt_num(t.test_snr_db));
        for o in &r.outcomes {
            let _ = writeln!(
                errors,
                "{} {} {} {} {}",
                o.truth_doa.elevation, o.truth_doa.azimuth, o.phi_err, o.theta_err, o.eps
            );
        }
        errors.push_str("\n\n");
    }
    let a = dir.join("srde.dat");
    let b = dir.join("errors.dat");
    write_atomic(&a, srde.as_bytes())?;
    write_atomic(&b, errors.as_bytes())?;
    Ok(vec![a, b])
}

/// Reads reports from a JSON file holding either one report or a list.
pub fn read_reports(path: &Path) -> Result<Vec<Report>> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(vec![serde_json::from_value(value)?])
    }
}

/// Saves a model atomically, creating parent directories.
pub fn save_model(model: &PnnModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(path)
}
