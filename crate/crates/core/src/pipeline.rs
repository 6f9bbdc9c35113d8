//! On-disk orchestration of all phases.
//!
//! Each phase reads the artifacts of earlier phases from the output
//! directory, writes its own files into a subdirectory named after the phase,
//! and records a `manifest.json` with input and output digests, a config
//! snapshot and counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{self, load_predictions, LabelSpace, RelationInstance, Split};
use crate::curriculum::{emit_training_plan, BucketSpec, CurriculumSchedule, StageOrder};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::kg::{load_kg, Kg, DEFAULT_K};
use crate::lisa::{self, DEFAULT_LAMBDA};
use crate::mimic::{self, AugmentedInstance, Provenance};
use crate::remediation::{
    self, is_hard_failure_reason, AblationFlags, Analysis, RecordStatus, RemediatedInstance, RemediationConfig,
    RemediationRecord, StatusCounts,
};
use crate::selection::{self, SelectionConfig, DEFAULT_EPSILON};
use crate::taxonomy::{ErrorAnnotation, DEFAULT_DELTA};
use crate::teacher::{
    DecodingParams, GatewayConfig, MockBackend, MockRules, ModelBackend, RemoteBackend, RemoteConfig, ResponseCache,
    TeacherGateway,
};

pub const PHASES: [&str; 6] = ["select", "analyze", "remediate", "mimic", "annotate", "curriculum"];
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

/// Rule-table settings for the mock backend. Gold labels come from the
/// corpus itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub knowledge_entities: Vec<String>,
    pub entity_lexicon: Vec<String>,
    pub planted_wrong: BTreeSet<String>,
    pub prose_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(flatten)]
    pub remote: RemoteConfig,
    pub max_concurrent: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub mock: MockSettings,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let params = DecodingParams::default();
        Self {
            kind: BackendKind::Mock,
            remote: RemoteConfig::default(),
            max_concurrent: 4,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            mock: MockSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LisaSettings {
    /// `layer_index<TAB>score` file.
    pub importance: PathBuf,
    pub k: usize,
    pub lambda: f64,
}

impl Default for LisaSettings {
    fn default() -> Self {
        Self {
            importance: PathBuf::from("importance.tsv"),
            k: 8,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub predictions: PathBuf,
    pub kg_triples: Option<PathBuf>,
    pub kg_embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Defaults to mean + one standard deviation of the observed losses.
    pub tau: Option<f64>,
    pub epsilon: f64,
    pub delta: usize,
    pub kg_k: usize,
    /// Defaults to `min(|D_rem|, |D_correct|)`.
    pub sample_size: Option<usize>,
    pub fewshot_k: usize,
    pub bucket_spec: BucketSpec,
    pub epoch_budget: u32,
    pub reverse_curriculum: bool,
    pub ablation: AblationFlags,
    pub backend: BackendConfig,
    /// Defaults to the teacher backend settings.
    pub student_backend: Option<BackendConfig>,
    pub lisa: Option<LisaSettings>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            predictions: PathBuf::from("predictions.jsonl"),
            kg_triples: None,
            kg_embeddings: None,
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            tau: None,
            epsilon: DEFAULT_EPSILON,
            delta: DEFAULT_DELTA,
            kg_k: DEFAULT_K,
            sample_size: None,
            fewshot_k: 4,
            bucket_spec: BucketSpec::default(),
            epoch_budget: 1,
            reverse_curriculum: false,
            ablation: AblationFlags::default(),
            backend: BackendConfig::default(),
            student_backend: None,
            lisa: None,
            seed: 13,
        }
    }
}

fn rebase(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: Self = jsonl::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase_paths(base);
        Ok(config)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(base, &mut self.corpus);
        rebase(base, &mut self.predictions);
        rebase(base, &mut self.output_dir);
        for p in [&mut self.kg_triples, &mut self.kg_embeddings, &mut self.cache_dir].into_iter().flatten() {
            rebase(base, p);
        }
        if let Some(lisa) = &mut self.lisa {
            rebase(base, &mut lisa.importance);
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn validate(&self) -> Result<()> {
        SelectionConfig {
            tau: self.tau,
            epsilon: self.epsilon,
        }
        .validate()?;
        if self.kg_triples.is_some() != self.kg_embeddings.is_some() {
            return Err(Error::invalid("kg_triples and kg_embeddings must be given together"));
        }
        if self.epoch_budget == 0 {
            return Err(Error::invalid("epoch_budget must be at least 1"));
        }
        for b in std::iter::once(&self.backend).chain(&self.student_backend) {
            if b.max_concurrent == 0 {
                return Err(Error::invalid("max_concurrent must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub phase: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: Value,
    pub counts: BTreeMap<String, Value>,
    pub backend_calls: usize,
    pub hard_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnalysisFailure {
    instance_id: String,
    reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Teacher,
    Student,
}

pub struct Pipeline {
    config: PipelineConfig,
    teacher: Option<Arc<dyn ModelBackend>>,
    student: Option<Arc<dyn ModelBackend>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            teacher: None,
            student: None,
        })
    }

    /// Replaces the configured backends, e.g. with an instrumented mock.
    pub fn with_backends(mut self, teacher: Arc<dyn ModelBackend>, student: Arc<dyn ModelBackend>) -> Self {
        self.teacher = Some(teacher);
        self.student = Some(student);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn phase_dir(&self, phase: &str) -> PathBuf {
        self.config.output_dir.join(phase)
    }

    fn artifact(&self, phase: &str, file: &str) -> PathBuf {
        self.phase_dir(phase).join(file)
    }

    fn require(&self, phase: &'static str, file: &str) -> Result<PathBuf> {
        let path = self.artifact(phase, file);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { path, prior: phase })
        }
    }

    fn labels(&self) -> Result<LabelSpace> {
        corpus::read_label_space(&self.config.corpus)
    }

    fn train_instances(&self, labels: &LabelSpace) -> Result<Vec<RelationInstance>> {
        let all = corpus::load_dataset(&self.config.corpus, labels)?;
        Ok(all.into_iter().filter(|x| x.split == Split::Train).collect())
    }

    fn kg(&self) -> Result<Option<Kg>> {
        match (&self.config.kg_triples, &self.config.kg_embeddings) {
            (Some(t), Some(e)) => load_kg(t, e).map(Some),
            _ => Ok(None),
        }
    }

    fn lexicon(&self, kg: Option<&Kg>) -> Vec<String> {
        let mock = &self.config.backend.mock;
        let mut names: BTreeSet<String> = kg.map(Kg::entity_names).unwrap_or_default().into_iter().collect();
        names.extend(mock.entity_lexicon.iter().cloned());
        names.extend(mock.knowledge_entities.iter().cloned());
        names.into_iter().collect()
    }

    fn backend_config(&self, role: Role) -> &BackendConfig {
        match role {
            Role::Teacher => &self.config.backend,
            Role::Student => self.config.student_backend.as_ref().unwrap_or(&self.config.backend),
        }
    }

    fn gateway(&self, role: Role, kg: Option<&Kg>) -> Result<TeacherGateway> {
        let settings = self.backend_config(role);
        let injected = match role {
            Role::Teacher => self.teacher.clone(),
            Role::Student => self.student.clone(),
        };
        let backend: Arc<dyn ModelBackend> = match (injected, settings.kind) {
            (Some(b), _) => b,
            (None, BackendKind::Remote) => Arc::new(RemoteBackend::new(settings.remote.clone())?),
            (None, BackendKind::Mock) => {
                let labels = self.labels()?;
                let gold = corpus::load_dataset(&self.config.corpus, &labels)?
                    .into_iter()
                    .map(|x| (x.id, x.reference_relations))
                    .collect();
                let mut lexicon = self.lexicon(kg);
                lexicon.retain(|n| !settings.mock.knowledge_entities.contains(n));
                let rules = MockRules {
                    delta: self.config.delta,
                    knowledge_entities: settings.mock.knowledge_entities.clone(),
                    entity_lexicon: lexicon,
                    gold,
                    planted_wrong: settings.mock.planted_wrong.clone(),
                    prose_ids: settings.mock.prose_ids.clone(),
                };
                let name = match role {
                    Role::Teacher => "mock-teacher",
                    Role::Student => "mock-student",
                };
                Arc::new(MockBackend::with_name(name, rules))
            }
        };
        let cache = ResponseCache::on_disk(self.config.cache_dir())?;
        TeacherGateway::new(
            backend,
            cache,
            GatewayConfig {
                max_concurrent: settings.max_concurrent,
                params: DecodingParams {
                    temperature: settings.temperature,
                    max_tokens: settings.max_tokens,
                },
                delta: self.config.delta,
            },
        )
    }

    fn remediation_config(&self, kg: Option<&Kg>) -> RemediationConfig {
        RemediationConfig {
            kg_k: self.config.kg_k,
            flags: self.config.ablation,
            lexicon: self.lexicon(kg),
        }
    }

    fn finish(
        &self,
        phase: &str,
        inputs: &[&Path],
        outputs: &[PathBuf],
        counts: BTreeMap<String, Value>,
        backend_calls: usize,
        hard_failures: usize,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            phase: phase.to_string(),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            inputs: inputs.iter().map(|p| file_digest(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| file_digest(p)).collect::<Result<_>>()?,
            config: serde_json::to_value(&self.config)?,
            counts,
            backend_calls,
            hard_failures,
        };
        jsonl::write_json(&self.artifact(phase, MANIFEST), &manifest)?;
        log::info!("{phase}: done ({backend_calls} backend calls, {hard_failures} hard failures)");
        Ok(manifest)
    }

    /// Loss-threshold split of the training instances.
    pub fn select(&self) -> Result<Manifest> {
        let labels = self.labels()?;
        let instances = self.train_instances(&labels)?;
        let predictions = load_predictions(&self.config.predictions, &labels)?;
        let config = SelectionConfig {
            tau: self.config.tau,
            epsilon: self.config.epsilon,
        };
        let part = selection::partition(&instances, &predictions, &labels, &config)?;
        let d_error = self.artifact("select", "d_error.jsonl");
        let d_correct = self.artifact("select", "d_correct.jsonl");
        let losses = self.artifact("select", "losses.jsonl");
        corpus::save_dataset(&part.error, &labels, &d_error)?;
        corpus::save_dataset(&part.correct, &labels, &d_correct)?;
        jsonl::write(&losses, &part.records)?;
        let counts = BTreeMap::from([
            ("instances".into(), json!(instances.len())),
            ("d_error".into(), json!(part.error.len())),
            ("d_correct".into(), json!(part.correct.len())),
            ("tau".into(), json!(part.tau)),
        ]);
        self.finish(
            "select",
            &[&self.config.corpus, &self.config.predictions],
            &[d_error, d_correct, losses],
            counts,
            0,
            0,
        )
    }

    /// Teacher error analysis of `D_error`.
    pub fn analyze(&self) -> Result<Manifest> {
        let d_error_path = self.require("select", "d_error.jsonl")?;
        let labels = self.labels()?;
        let d_error = corpus::load_dataset(&d_error_path, &labels)?;
        let kg = self.kg()?;
        let gateway = self.gateway(Role::Teacher, kg.as_ref())?;
        let analyses = remediation::analyze(&d_error, &gateway, &labels);

        let mut annotations: Vec<ErrorAnnotation> = Vec::new();
        let mut failures: Vec<AnalysisFailure> = Vec::new();
        for (x, a) in d_error.iter().zip(analyses) {
            match a {
                Ok(a) => annotations.push(a),
                Err(reason) => failures.push(AnalysisFailure {
                    instance_id: x.id.clone(),
                    reason,
                }),
            }
        }
        let ann_path = self.artifact("analyze", "annotations.jsonl");
        let fail_path = self.artifact("analyze", "failures.jsonl");
        jsonl::write(&ann_path, &annotations)?;
        jsonl::write(&fail_path, &failures)?;

        let mut histogram = [0usize; 6];
        let mut types: BTreeMap<String, usize> = BTreeMap::new();
        for a in &annotations {
            histogram[usize::from(a.difficulty)] += 1;
            for t in &a.error_types {
                *types.entry(t.as_str().to_string()).or_default() += 1;
            }
        }
        let counts = BTreeMap::from([
            ("instances".into(), json!(d_error.len())),
            ("annotated".into(), json!(annotations.len())),
            ("failures".into(), json!(failures.len())),
            ("flagged_ambiguous".into(), json!(annotations.iter().filter(|a| a.ambiguous_discard).count())),
            ("requires_kg".into(), json!(annotations.iter().filter(|a| a.requires_kg).count())),
            ("difficulty_histogram".into(), json!(histogram)),
            ("error_types".into(), json!(types)),
        ]);
        self.finish(
            "analyze",
            &[&d_error_path],
            &[ann_path, fail_path],
            counts,
            gateway.backend_calls(),
            failures.len(),
        )
    }

    fn load_analyses(&self, d_error: &[RelationInstance]) -> Result<Vec<Analysis>> {
        let ann_path = self.require("analyze", "annotations.jsonl")?;
        let fail_path = self.require("analyze", "failures.jsonl")?;
        let mut by_id: HashMap<String, Analysis> = HashMap::new();
        for a in jsonl::read::<ErrorAnnotation>(&ann_path)? {
            a.validate()?;
            by_id.insert(a.instance_id.clone(), Ok(a));
        }
        for f in jsonl::read::<AnalysisFailure>(&fail_path)? {
            by_id.insert(f.instance_id, Err(f.reason));
        }
        d_error
            .iter()
            .map(|x| {
                by_id.remove(&x.id).ok_or_else(|| Error::Validation {
                    id: x.id.clone(),
                    message: "no analysis recorded; rerun `analyze`".into(),
                })
            })
            .collect()
    }

    /// Remediation, assembly and teacher verification, producing `D_rem`.
    pub fn remediate(&self) -> Result<Manifest> {
        let d_error_path = self.require("select", "d_error.jsonl")?;
        let labels = self.labels()?;
        let d_error = corpus::load_dataset(&d_error_path, &labels)?;
        let analyses = self.load_analyses(&d_error)?;
        let kg = self.kg()?;
        let gateway = self.gateway(Role::Teacher, kg.as_ref())?;
        let config = self.remediation_config(kg.as_ref());
        let mut records = remediation::remediate_all(&d_error, &analyses, &gateway, kg.as_ref(), &labels, &config);
        let d_rem = remediation::verify_records(&d_error, &mut records, &gateway, &labels);

        let records_path = self.artifact("remediate", "records.jsonl");
        let d_rem_path = self.artifact("remediate", "d_rem.jsonl");
        jsonl::write(&records_path, &records)?;
        corpus::save_records(&d_rem_path, &labels, &d_rem)?;

        let status = StatusCounts::of(&records);
        let mut tags: BTreeMap<String, usize> = BTreeMap::new();
        for r in &records {
            for t in &r.tags {
                *tags.entry(t.token().to_string()).or_default() += 1;
            }
        }
        let counts = BTreeMap::from([
            ("d_error".into(), json!(d_error.len())),
            ("d_rem".into(), json!(d_rem.len())),
            ("status".into(), serde_json::to_value(&status)?),
            ("tags".into(), json!(tags)),
            ("with_rewrite".into(), json!(d_rem.iter().filter(|x| x.rewritten_sentence.is_some()).count())),
        ]);
        let mut inputs: Vec<PathBuf> = vec![d_error_path, self.artifact("analyze", "annotations.jsonl")];
        inputs.extend(self.config.kg_triples.iter().cloned());
        let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        let hard = records.iter().filter(|r| r.is_hard_failure()).count();
        self.finish("remediate", &inputs, &[records_path, d_rem_path], counts, gateway.backend_calls(), hard)
    }

    /// `D_mimic`, the few-shot block, the instruction-tuning file and, when
    /// configured, the layer plan.
    pub fn mimic(&self) -> Result<Manifest> {
        let d_rem_path = self.require("remediate", "d_rem.jsonl")?;
        let d_correct_path = self.require("select", "d_correct.jsonl")?;
        let labels = self.labels()?;
        let (_, d_rem) = corpus::load_records::<RemediatedInstance>(&d_rem_path)?;
        let d_correct = corpus::load_dataset(&d_correct_path, &labels)?;
        let sample_size = self
            .config
            .sample_size
            .unwrap_or_else(|| mimic::default_sample_size(d_rem.len(), d_correct.len()));
        let d_mimic = mimic::build_d_mimic(&d_rem, &d_correct, sample_size, self.config.seed)?;
        let fewshot = mimic::render_fewshot_block(&d_mimic, self.config.fewshot_k.min(d_mimic.len()))?;
        let instructions = mimic::instruction_dataset(&d_mimic, &labels, &fewshot, self.config.delta)?;

        let d_mimic_path = self.artifact("mimic", "d_mimic.jsonl");
        let fewshot_path = self.artifact("mimic", "fewshot.txt");
        let it_path = self.artifact("mimic", "instruction_tuning.jsonl");
        corpus::save_records(&d_mimic_path, &labels, &d_mimic)?;
        std::fs::write(&fewshot_path, format!("{fewshot}\n")).map_err(|e| Error::io(&fewshot_path, e))?;
        jsonl::write(&it_path, &instructions)?;
        let mut outputs = vec![d_mimic_path, fewshot_path, it_path];
        let mut inputs: Vec<PathBuf> = vec![d_rem_path, d_correct_path];

        let mut counts = BTreeMap::from([
            ("d_rem".into(), json!(d_rem.len())),
            ("sample_size".into(), json!(sample_size)),
            ("d_mimic".into(), json!(d_mimic.len())),
            ("fewshot_k".into(), json!(self.config.fewshot_k.min(d_mimic.len()))),
        ]);
        if let Some(settings) = &self.config.lisa {
            let importance = lisa::load_importance(&settings.importance)?;
            let plan = lisa::plan(&importance, settings.k, settings.lambda)?;
            let plan_path = self.artifact("mimic", "lisa_plan.json");
            jsonl::write_json(&plan_path, &plan)?;
            counts.insert("lisa_selected".into(), json!(plan.selected));
            inputs.push(settings.importance.clone());
            outputs.push(plan_path);
        }
        let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        self.finish("mimic", &inputs, &outputs, counts, 0, 0)
    }

    /// Student annotation of every training instance, producing `D_aug`.
    pub fn annotate(&self) -> Result<Manifest> {
        let d_mimic_path = self.require("mimic", "d_mimic.jsonl")?;
        let labels = self.labels()?;
        let instances = self.train_instances(&labels)?;
        let kg = self.kg()?;
        let student = self.gateway(Role::Student, kg.as_ref())?;
        let config = self.remediation_config(kg.as_ref());
        let d_aug = mimic::annotate_corpus(&instances, &student, kg.as_ref(), &labels, &config);

        let d_aug_path = self.artifact("annotate", "d_aug.jsonl");
        corpus::save_records(&d_aug_path, &labels, &d_aug)?;
        let hard = d_aug
            .iter()
            .filter(|x| x.note.as_deref().is_some_and(is_hard_failure_reason))
            .count();
        let counts = BTreeMap::from([
            ("instances".into(), json!(instances.len())),
            ("d_aug".into(), json!(d_aug.len())),
            ("difficulty_histogram".into(), json!(mimic::difficulty_histogram(&d_aug))),
            (
                "remediated".into(),
                json!(d_aug.iter().filter(|x| x.provenance == Provenance::Remediated).count()),
            ),
            (
                "kg_enriched".into(),
                json!(d_aug.iter().filter(|x| x.enriched_sentence.contains("\n\nFacts:\n")).count()),
            ),
        ]);
        self.finish(
            "annotate",
            &[&self.config.corpus, &d_mimic_path],
            &[d_aug_path],
            counts,
            student.backend_calls(),
            hard,
        )
    }

    /// Buckets, Baby Steps stages, training plan and stage losses.
    pub fn curriculum(&self) -> Result<Manifest> {
        let d_aug_path = self.require("annotate", "d_aug.jsonl")?;
        let labels = self.labels()?;
        let (_, d_aug) = corpus::load_records::<AugmentedInstance>(&d_aug_path)?;
        let entries: Vec<(String, u8)> = d_aug.iter().map(|x| (x.instance.id.clone(), x.difficulty)).collect();
        let order = if self.config.reverse_curriculum {
            StageOrder::HardToEasy
        } else {
            StageOrder::EasyToHard
        };
        let instances: Vec<RelationInstance> = d_aug.iter().map(|x| x.instance.clone()).collect();
        let predictions = load_predictions(&self.config.predictions, &labels)?;
        let losses: HashMap<String, f64> =
            selection::loss_records(&instances, &predictions, &labels, self.config.epsilon)?
                .into_iter()
                .map(|r| (r.instance_id, r.loss))
                .collect();
        let schedule = CurriculumSchedule::build(&entries, &self.config.bucket_spec, order)?.with_losses(&losses)?;

        let schedule_path = self.artifact("curriculum", "schedule.json");
        let plan_path = self.artifact("curriculum", "training_plan.json");
        let loss_path = self.artifact("curriculum", "loss_report.json");
        jsonl::write_json(&schedule_path, &schedule)?;
        emit_training_plan(&schedule, self.config.epoch_budget, &plan_path)?;
        jsonl::write_json(&loss_path, &schedule.loss_report())?;
        let counts = BTreeMap::from([
            ("d_aug".into(), json!(d_aug.len())),
            ("bucket_sizes".into(), json!(schedule.bucket_sizes())),
            ("stage_sizes".into(), json!(schedule.stage_sizes())),
            ("total_loss".into(), json!(schedule.total_loss)),
        ]);
        self.finish(
            "curriculum",
            &[&d_aug_path, &self.config.predictions],
            &[schedule_path, plan_path, loss_path],
            counts,
            0,
            0,
        )
    }

    pub fn run_phase(&self, phase: &str) -> Result<Manifest> {
        match phase {
            "select" => self.select(),
            "analyze" => self.analyze(),
            "remediate" => self.remediate(),
            "mimic" => self.mimic(),
            "annotate" => self.annotate(),
            "curriculum" => self.curriculum(),
            other => Err(Error::invalid(format!("unknown phase `{other}`"))),
        }
    }

    pub fn run_all(&self) -> Result<Vec<Manifest>> {
        PHASES.iter().map(|p| self.run_phase(p)).collect()
    }
}

/// Read-only summary of an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub manifests: Vec<Manifest>,
    pub difficulty_histogram: Option<[usize; 6]>,
    pub tag_frequency: BTreeMap<String, usize>,
    pub status_counts: Option<StatusCounts>,
    pub drops: Vec<(String, RecordStatus, String)>,
}

pub fn summarize(output_dir: &Path) -> Result<Summary> {
    let mut manifests = Vec::new();
    for phase in PHASES {
        let path = output_dir.join(phase).join(MANIFEST);
        if path.is_file() {
            manifests.push(jsonl::read_json::<Manifest>(&path)?);
        }
    }
    if manifests.is_empty() {
        return Err(Error::MissingArtifact {
            path: output_dir.join("select").join(MANIFEST),
            prior: "select",
        });
    }
    let d_aug_path = output_dir.join("annotate").join("d_aug.jsonl");
    let difficulty_histogram = if d_aug_path.is_file() {
        let (_, d_aug) = corpus::load_records::<AugmentedInstance>(&d_aug_path)?;
        Some(mimic::difficulty_histogram(&d_aug))
    } else {
        None
    };
    let records_path = output_dir.join("remediate").join("records.jsonl");
    let mut tag_frequency = BTreeMap::new();
    let mut drops = Vec::new();
    let mut status_counts = None;
    if records_path.is_file() {
        let records: Vec<RemediationRecord> = jsonl::read(&records_path)?;
        for r in &records {
            for t in &r.tags {
                *tag_frequency.entry(t.token().to_string()).or_insert(0) += 1;
            }
            if !r.is_kept() {
                drops.push((r.instance_id.clone(), r.status, r.reason.clone().unwrap_or_default()));
            }
        }
        status_counts = Some(StatusCounts::of(&records));
    }
    Ok(Summary {
        manifests,
        difficulty_histogram,
        tag_frequency,
        status_counts,
        drops,
    })
}

fn status_name(s: RecordStatus) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut out = String::new();
        writeln!(out, "Phases").ok();
        for m in &self.manifests {
            let counts: Vec<String> = m
                .counts
                .iter()
                .filter(|(_, v)| v.is_number())
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            writeln!(
                out,
                "  {:<11} {} (backend calls {}, hard failures {})",
                m.phase,
                counts.join(" "),
                m.backend_calls,
                m.hard_failures
            )
            .ok();
        }
        if let Some(h) = &self.difficulty_histogram {
            writeln!(out, "\nDifficulty histogram (D_aug, total {})", h.iter().sum::<usize>()).ok();
            for (score, n) in h.iter().enumerate() {
                writeln!(out, "  {score}  {n:>5}").ok();
            }
        }
        if !self.tag_frequency.is_empty() {
            writeln!(out, "\nTag frequency (remediation records)").ok();
            for (tag, n) in &self.tag_frequency {
                writeln!(out, "  {tag:<18} {n:>5}").ok();
            }
        }
        if let Some(s) = &self.status_counts {
            writeln!(
                out,
                "\nRecord status: kept {}, discarded_ambiguous {}, dropped_unverified {}, dropped_backend_failure {}",
                s.kept, s.discarded_ambiguous, s.dropped_unverified, s.dropped_backend_failure
            )
            .ok();
        }
        if !self.drops.is_empty() {
            writeln!(out, "\nDiscard and drop reasons").ok();
            for (id, status, reason) in &self.drops {
                writeln!(out, "  {id}: {} ({reason})", status_name(*status)).ok();
            }
        }
        f.write_str(out.trim_end())
    }
}

/// Standalone layer plan from an importance file.
pub fn write_lisa_plan(importance: &Path, k: usize, lambda: f64, out: &Path) -> Result<lisa::LisaPlan> {
    let imp = lisa::load_importance(importance)?;
    let plan = lisa::plan(&imp, k, lambda)?;
    jsonl::write_json(out, &plan)?;
    Ok(plan)
}
