//! End-to-end orchestration: scene generation, featurization, embeddings,
//! evaluation, hole detection and rendering, with a run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::embed::{pca, spectral_layout, umap_from_graph, Embedding, UmapConfig};
use crate::error::{Error, Result};
use crate::evaluate::{
    boundary_overlap, detect_holes, trustworthiness_with, HoleReport, InputRanks, RasterConfig, TrustworthinessReport,
};
use crate::features::{assemble_features, FeatureMatrix, FeatureSpec, VirtualGridConfig};
use crate::neighbors::{fuzzy_graph, NeighborGraph};
use crate::render::{labels_from_truth, render_svg, SvgStyle};
use crate::scenario::{generate, load_dataset, save_dataset, Dataset, HoleGroundTruth, Scene};

pub const DATASET_FILE: &str = "dataset.chds";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Umap,
    Pca,
    Spectral,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Umap => "umap",
            Algo::Pca => "pca",
            Algo::Spectral => "spectral",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "umap" => Ok(Algo::Umap),
            "pca" => Ok(Algo::Pca),
            "spectral" => Ok(Algo::Spectral),
            other => Err(Error::Config(format!("unknown algorithm {other:?} (expected umap, pca or spectral)"))),
        }
    }
}

/// Scenario given either as a path to a scene JSON file or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Path(PathBuf),
    Inline(Box<Scene>),
}

fn default_tw_k() -> usize {
    UmapConfig::default().n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    #[serde(default = "default_tw_k")]
    pub tw_k: usize,
    #[serde(default)]
    pub raster: RasterConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { tw_k: default_tw_k(), raster: RasterConfig::default() }
    }
}

fn default_baselines() -> Vec<Algo> {
    vec![Algo::Pca, Algo::Spectral]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub virtual_grid: VirtualGridConfig,
    #[serde(default)]
    pub umap: UmapConfig,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Algo>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub render: SvgStyle,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Drives scene noise and the layout optimizer.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub write_features: bool,
}

impl PipelineConfig {
    /// Parses a config; a relative scenario path is resolved against `base_dir`
    /// and the scene is loaded inline. Returns the raw JSON as well.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<(Self, Value)> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg: PipelineConfig = serde_json::from_value(raw.clone()).map_err(|e| Error::Config(e.to_string()))?;
        if let ScenarioSource::Path(p) = &cfg.scenario {
            let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let scene = Scene::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.scenario = ScenarioSource::Inline(Box::new(scene));
        }
        cfg.validate()?;
        Ok((cfg, raw))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Value)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.umap.validate().map_err(cfg_err)?;
        self.virtual_grid.validate().map_err(cfg_err)?;
        self.evaluation.raster.validate().map_err(cfg_err)?;
        if self.evaluation.tw_k == 0 {
            return Err(Error::Config("evaluation.tw_k must be positive".into()));
        }
        if self.baselines.contains(&Algo::Umap) {
            return Err(Error::Config("umap always runs; list only pca and spectral as baselines".into()));
        }
        Ok(())
    }

    pub fn scene(&self) -> Result<&Scene> {
        match &self.scenario {
            ScenarioSource::Inline(s) => Ok(s),
            ScenarioSource::Path(p) => Err(Error::Config(format!("scenario {} was not resolved", p.display()))),
        }
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Sets one sweepable field from a `key=value` override; on error the
    /// config is left unchanged.
    pub fn apply_param(&mut self, key: &str, value: &str) -> Result<()> {
        let mut next = self.clone();
        next.set_param(key, value)?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn set_param(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config(format!("bad value {value:?} for parameter {key}")))
        }
        match key {
            "n" => self.umap.n = parse(key, value)?,
            "dmin" | "d_min" => self.umap.d_min = parse(key, value)?,
            "epochs" => self.umap.epochs = parse(key, value)?,
            "lr" | "learning_rate" => self.umap.learning_rate = parse(key, value)?,
            "neg" | "neg_samples" => self.umap.neg_samples = parse(key, value)?,
            "dim" => self.umap.dim = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "k" | "tw_k" => self.evaluation.tw_k = parse(key, value)?,
            "grid" | "grid_size" => self.evaluation.raster.grid_size = parse(key, value)?,
            "closing" | "closing_radius" => self.evaluation.raster.closing_radius = parse(key, value)?,
            "min_hole_area" => self.evaluation.raster.min_hole_area = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Scene,
    Features,
    Embed,
    Eval,
    Detect,
    Render,
    Manifest,
}

impl Stage {
    /// Process exit status for a failure in this stage.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Scene => 10,
            Stage::Features => 11,
            Stage::Embed => 12,
            Stage::Eval => 13,
            Stage::Detect => 14,
            Stage::Render => 15,
            Stage::Manifest => 16,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Scene => "scene",
            Stage::Features => "features",
            Stage::Embed => "embed",
            Stage::Eval => "eval",
            Stage::Detect => "detect",
            Stage::Render => "render",
            Stage::Manifest => "manifest",
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|error| PipelineError { stage, error })
    }
}

pub type StageResult<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlgoMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_holes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_anomalies: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// The config document exactly as supplied, when read from JSON.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_source: Option<Value>,
    pub seed: u64,
    pub deterministic: bool,
    pub threads: usize,
    pub stages: Vec<StageTiming>,
    pub artifacts: Vec<Artifact>,
    pub metrics: BTreeMap<String, AlgoMetrics>,
    pub partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn stage_seconds(&self, stage: &str) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.seconds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Forces the single-threaded layout optimizer.
    pub deterministic: bool,
}

/// Stage-by-stage driver that records timings and artifacts.
pub struct Runner {
    cfg: PipelineConfig,
    out: PathBuf,
    dataset_path: PathBuf,
    manifest: Manifest,
    graph: Option<NeighborGraph>,
    ranks: Option<InputRanks>,
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

impl Runner {
    pub fn new(cfg: PipelineConfig, source: Option<Value>, opts: RunOptions) -> StageResult<Self> {
        let mut cfg = cfg;
        cfg.validate().at(Stage::Config)?;
        if opts.deterministic {
            cfg.umap.parallel = false;
        }
        cfg.umap.seed = cfg.seed;
        let out = cfg.output_dir.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)).at(Stage::Config)?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            config_source: source,
            seed: cfg.seed,
            deterministic: opts.deterministic,
            threads: rayon::current_num_threads(),
            stages: vec![],
            artifacts: vec![],
            metrics: BTreeMap::new(),
            partial: false,
            failed_stage: None,
            error: None,
        };
        Ok(Self { dataset_path: out.join(DATASET_FILE), cfg, out, manifest, graph: None, ranks: None })
    }

    /// Reads the dataset from elsewhere (sweeps share one dataset).
    pub fn with_dataset_path(mut self, path: PathBuf) -> Self {
        self.dataset_path = path;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    fn timed<T>(&mut self, label: String, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let value = f(self);
        self.manifest.stages.push(StageTiming { stage: label, seconds: start.elapsed().as_secs_f64() });
        value
    }

    fn record(&mut self, name: &str) {
        let path = self.out.join(name);
        let bytes = fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
        self.manifest.artifacts.retain(|a| a.path != name);
        self.manifest.artifacts.push(Artifact { path: name.to_string(), bytes });
    }

    fn metrics(&mut self, algo: Algo) -> &mut AlgoMetrics {
        self.manifest.metrics.entry(algo.name().to_string()).or_default()
    }

    pub fn scene(&mut self) -> StageResult<Dataset> {
        self.timed("scene".into(), |r| {
            let scene = r.cfg.scene()?.clone();
            let (ds, _) = generate(&scene, r.cfg.seed)?;
            save_dataset(&ds, &r.dataset_path)?;
            if r.dataset_path.parent() == Some(r.out.as_path()) {
                r.record(DATASET_FILE);
            }
            Ok(ds)
        })
        .at(Stage::Scene)
    }

    pub fn load_dataset(&mut self, stage: Stage) -> StageResult<Dataset> {
        load_dataset(&self.dataset_path).at(stage)
    }

    pub fn features(&mut self, ds: &Dataset) -> StageResult<FeatureMatrix> {
        self.timed("features".into(), |r| {
            let f = assemble_features(ds, &r.cfg.features, &r.cfg.virtual_grid)?;
            if r.cfg.write_features {
                let name = "features.csv";
                write_file(&r.out.join(name), |w| {
                    write!(w, "sample_id")?;
                    for c in 0..f.ncols() {
                        write!(w, ",f{c}")?;
                    }
                    writeln!(w)?;
                    for (row, id) in f.values.rows().into_iter().zip(&f.index_map) {
                        write!(w, "{id}")?;
                        for v in row {
                            write!(w, ",{v}")?;
                        }
                        writeln!(w)?;
                    }
                    Ok(())
                })?;
                r.record(name);
            }
            Ok(f)
        })
        .at(Stage::Features)
    }

    fn graph(&mut self, f: &FeatureMatrix) -> Result<NeighborGraph> {
        if self.graph.is_none() {
            self.graph = Some(fuzzy_graph(f, self.cfg.umap.n)?.2);
        }
        Ok(self.graph.clone().expect("just built"))
    }

    pub fn embed(&mut self, algo: Algo, f: &FeatureMatrix) -> StageResult<Embedding> {
        self.timed(format!("embed:{algo}"), |r| {
            let emb = match algo {
                Algo::Umap => {
                    let g = r.graph(f)?;
                    umap_from_graph(g, f.index_map.clone(), &r.cfg.umap)?.embedding
                }
                Algo::Pca => pca(f, r.cfg.umap.dim)?,
                Algo::Spectral => {
                    let g = r.graph(f)?;
                    let mut e = spectral_layout(&g, r.cfg.umap.dim)?;
                    e.index_map = f.index_map.clone();
                    e
                }
            };
            let name = format!("embedding_{algo}.csv");
            write_file(&r.out.join(&name), |w| emb.write_csv(w))?;
            r.record(&name);
            Ok(emb)
        })
        .at(Stage::Embed)
    }

    pub fn load_embedding(&self, algo: Algo, stage: Stage) -> StageResult<Embedding> {
        let path = self.out.join(format!("embedding_{algo}.csv"));
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e)).at(stage)?;
        Embedding::read_csv(BufReader::new(file)).at(stage)
    }

    pub fn evaluate(&mut self, algo: Algo, f: &FeatureMatrix, emb: &Embedding) -> StageResult<TrustworthinessReport> {
        self.timed(format!("eval:{algo}"), |r| {
            if f.index_map != emb.index_map {
                return Err(Error::domain("embedding rows do not match the feature rows"));
            }
            if r.ranks.is_none() {
                r.ranks = Some(InputRanks::new(f));
            }
            let report = trustworthiness_with(r.ranks.as_ref().expect("just built"), emb, r.cfg.evaluation.tw_k)?;
            let name = format!("tw_{algo}.json");
            write_json(&r.out.join(&name), &report)?;
            r.record(&name);
            let mean = report.mean();
            let m = r.metrics(algo);
            m.t_min = Some(report.t_min);
            m.t_mean = Some(mean);
            Ok(report)
        })
        .at(Stage::Eval)
    }

    pub fn detect(&mut self, algo: Algo, emb: &Embedding, ds: Option<&Dataset>) -> StageResult<HoleReport> {
        self.timed(format!("detect:{algo}"), |r| {
            let report = detect_holes(emb, &r.cfg.evaluation.raster)?;
            let name = format!("holes_{algo}.json");
            write_json(&r.out.join(&name), &report)?;
            r.record(&name);
            let overlap = match ds {
                Some(ds) if report.num_holes > 0 => {
                    ds.ground_truth().map(|t| boundary_overlap(&report, Some(&t), &ds.grid)).transpose()?
                }
                _ => None,
            };
            let m = r.metrics(algo);
            m.num_holes = Some(report.num_holes);
            m.open_anomalies = Some(report.open_anomalies.len());
            m.boundary_overlap = overlap;
            Ok(report)
        })
        .at(Stage::Detect)
    }

    pub fn render(&mut self, algo: Algo, emb: &Embedding, truth: Option<&HoleGroundTruth>) -> StageResult<()> {
        self.timed(format!("render:{algo}"), |r| {
            let labels = truth.map(|t| labels_from_truth(emb, t));
            let svg = render_svg(emb, labels.as_deref(), &r.cfg.render)?;
            let name = format!("embedding_{algo}.svg");
            write_file(&r.out.join(&name), |w| w.write_all(svg.as_bytes()))?;
            r.record(&name);
            Ok(())
        })
        .at(Stage::Render)
    }

    /// Algorithms of a full run: UMAP first, then the baselines.
    pub fn algos(&self) -> Vec<Algo> {
        let mut out = vec![Algo::Umap];
        out.extend(self.cfg.baselines.iter().copied().filter(|a| *a != Algo::Umap));
        out.dedup();
        out
    }

    /// Writes the manifest and passes the stage outcome through.
    pub fn conclude<T>(self, outcome: StageResult<T>) -> StageResult<Manifest> {
        match outcome {
            Ok(_) => self.finish(None),
            Err(e) => {
                self.finish(Some(&e))?;
                Err(e)
            }
        }
    }

    /// Writes the manifest, flagging it partial if a stage failed.
    pub fn finish(mut self, failure: Option<&PipelineError>) -> StageResult<Manifest> {
        if let Some(e) = failure {
            self.manifest.partial = true;
            self.manifest.failed_stage = Some(e.stage);
            self.manifest.error = Some(e.error.to_string());
        }
        write_json(&self.out.join(MANIFEST_FILE), &self.manifest).at(Stage::Manifest)?;
        Ok(self.manifest)
    }
}

/// Runs every stage; on failure the partial manifest is still written.
pub fn run_pipeline(cfg: PipelineConfig, source: Option<Value>, opts: RunOptions) -> StageResult<Manifest> {
    let mut runner = Runner::new(cfg, source, opts)?;
    let algos = runner.algos();
    let outcome = run_stages(&mut runner, &algos, true);
    runner.conclude(outcome)
}

/// Features through render for `algos`; generates the dataset first when
/// `fresh_scene` is set, otherwise reads the persisted one.
pub fn run_stages(r: &mut Runner, algos: &[Algo], fresh_scene: bool) -> StageResult<()> {
    let ds = if fresh_scene { r.scene()? } else { r.load_dataset(Stage::Features)? };
    let truth = ds.ground_truth();
    let f = r.features(&ds)?;
    for &algo in algos {
        let emb = r.embed(algo, &f)?;
        r.evaluate(algo, &f, &emb)?;
        r.detect(algo, &emb, Some(&ds))?;
        r.render(algo, &emb, truth.as_ref())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let stages = [
            Stage::Config,
            Stage::Scene,
            Stage::Features,
            Stage::Embed,
            Stage::Eval,
            Stage::Detect,
            Stage::Render,
            Stage::Manifest,
        ];
        let mut codes: Vec<i32> = stages.iter().map(|s| s.exit_code()).collect();
        assert!(codes.iter().all(|&c| c != 0));
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), stages.len());
    }

    #[test]
    fn algo_names_round_trip() {
        for a in [Algo::Umap, Algo::Pca, Algo::Spectral] {
            assert_eq!(a.name().parse::<Algo>().unwrap(), a);
        }
        assert!("tsne".parse::<Algo>().is_err());
    }
}
