use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use tracing::info;

use osb_core::attribution::{category_importance, compare_maps, ImportanceMap};
use osb_core::checkpoint::write_json;
use osb_core::clickme::{aggregate_maps, reliability_analysis, AnnotatedMap, AnnotationStore, PixelEmbedder};
use osb_core::critics::{
    train_feature_extractor, train_prototype_classifier, Embedder, EpisodeHyper, FeatureExtractor, PrototypeClassifier,
    PrototypeSet,
};
use osb_core::dataset::{
    apply_split, build_fewshot_concepts, load_concepts, make_synthetic_fixture, parse_ndjson, rasterize,
    save_concepts, split_concepts, training_set, ConceptSet, Split, SOURCE_CANVAS,
};
use osb_core::metrics::{
    bin_by_originality, diversity, fit_generalization_curve, originality, save_concept_csv, ConceptEvaluation,
    CurveDocument, ScoredSample,
};
use osb_core::models::{sample_batch, train, Conditioning, ConditioningMode, ModelCheckpoint, SampleOptions};
use osb_core::Image;

use crate::config::{ConfigError, ExperimentConfig};
use crate::plot::{scatter_png, Series};

/// Paths of one run directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let dir = cfg.out.clone();
        Self { cfg, dir }
    }

    pub fn concepts_dir(&self) -> PathBuf {
        self.dir.join("dataset").join("concepts")
    }

    pub fn split_file(&self) -> PathBuf {
        self.dir.join("dataset").join("split.json")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.dir.join("critics").join("features")
    }

    pub fn classifier_dir(&self) -> PathBuf {
        self.dir.join("critics").join("classifier")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.dir.join("model")
    }

    pub fn samples_dir(&self, gamma: f64) -> PathBuf {
        self.dir.join("samples").join(format!("gamma-{gamma}"))
    }

    /// A component seed shifted by the run seed.
    fn seed(&self, component: u64) -> u64 {
        component.wrapping_add(self.cfg.seed)
    }

    fn concepts(&self) -> anyhow::Result<Vec<ConceptSet>> {
        let dir = self.concepts_dir();
        if !dir.is_dir() {
            bail!("no dataset at {}; run `osb dataset synth` or `osb dataset build` first", dir.display());
        }
        let c = load_concepts(&dir)?;
        if c.is_empty() {
            bail!("dataset at {} is empty", dir.display());
        }
        Ok(c)
    }

    fn split(&self, split: Split) -> anyhow::Result<Vec<ConceptSet>> {
        Ok(self.concepts()?.into_iter().filter(|c| c.split == split).collect())
    }

    fn features(&self) -> anyhow::Result<FeatureExtractor> {
        FeatureExtractor::load(self.features_dir()).context("loading feature extractor; run `osb critics train` first")
    }

    fn classifier(&self) -> anyhow::Result<PrototypeClassifier> {
        PrototypeClassifier::load(self.classifier_dir()).context("loading classifier; run `osb critics train` first")
    }

    fn model(&self) -> anyhow::Result<ModelCheckpoint> {
        ModelCheckpoint::load(self.model_dir()).context("loading model; run `osb train` first")
    }
}

fn read_exclusions(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Drops excluded concepts, splits the rest and writes the dataset.
fn finish_dataset(run: &Run, mut concepts: Vec<ConceptSet>) -> anyhow::Result<Vec<PathBuf>> {
    if let Some(path) = &run.cfg.dataset.exclude {
        let excluded = read_exclusions(path)?;
        concepts.retain(|c| !excluded.contains(&c.concept_id));
    }
    let ids: Vec<String> = concepts.iter().map(|c| c.concept_id.clone()).collect();
    let manifest = split_concepts(&ids, run.cfg.dataset.n_train, run.seed(0))?;
    apply_split(&mut concepts, &manifest)?;
    let dir = run.concepts_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    save_concepts(&dir, &concepts)?;
    write_json(run.split_file(), &manifest)?;
    info!(train = manifest.train.len(), test = manifest.test.len(), "dataset written");
    Ok(vec![dir, run.split_file()])
}

pub fn dataset_synth(run: &Run) -> anyhow::Result<Vec<PathBuf>> {
    let mut p = run.cfg.dataset.fixture.clone();
    p.seed = run.seed(p.seed);
    finish_dataset(run, make_synthetic_fixture(&p)?)
}

/// Clusters raw stroke drawings category by category into few-shot concepts.
/// Embeddings come from a trained feature extractor when one exists in the
/// run, otherwise from downsampled pixels.
pub fn dataset_build(run: &Run, ndjson: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut params = run.cfg.dataset.pipeline.clone();
    params.seed = run.seed(params.seed);
    let mut by_category: BTreeMap<String, Vec<(String, Image)>> = BTreeMap::new();
    for path in ndjson {
        let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        for d in parse_ndjson(std::io::BufReader::new(f), SOURCE_CANVAS)? {
            let img = rasterize(&d, params.image_size)?;
            by_category.entry(d.category.clone()).or_default().push((d.source_id.clone(), img));
        }
    }
    if by_category.is_empty() {
        bail!("no drawings in the given files");
    }
    let features = run.features_dir().is_dir().then(|| run.features()).transpose()?;
    let pixels = PixelEmbedder { size: 16 };
    let embedder: &dyn Embedder = match &features {
        Some(f) => f,
        None => &pixels,
    };
    let mut concepts = Vec::new();
    for (category, samples) in &by_category {
        let found = build_fewshot_concepts(category, samples, embedder, &params)?;
        info!(category = category.as_str(), drawings = samples.len(), concepts = found.len(), "clustered");
        concepts.extend(found);
    }
    finish_dataset(run, concepts)
}

pub fn critics_train(run: &Run) -> anyhow::Result<Vec<PathBuf>> {
    let concepts = run.concepts()?;
    let c = &run.cfg.critics;
    let mut config = c.config.clone();
    config.seed = run.seed(config.seed);
    let all: Vec<Image> = concepts.iter().flat_map(|c| c.variations.iter().cloned()).collect();
    let mut contrastive = c.contrastive.clone();
    contrastive.seed = run.seed(contrastive.seed);
    contrastive.batch_size = contrastive.batch_size.min(all.len());
    let features = train_feature_extractor(&all, &config, &contrastive)?;
    features.save(run.features_dir())?;

    let classes: Vec<Vec<Image>> = concepts
        .iter()
        .filter(|c| c.split == Split::Train)
        .map(|c| c.variations.clone())
        .collect();
    let episodes = EpisodeHyper {
        way: c.episodes.way.min(classes.len()),
        seed: run.seed(c.episodes.seed),
        ..c.episodes.clone()
    };
    if episodes.way < c.episodes.way {
        info!(way = episodes.way, "fewer training concepts than the episode width; narrowing episodes");
    }
    config.seed = config.seed.wrapping_add(1);
    let classifier = train_prototype_classifier(&classes, &config, &episodes)?;
    classifier.save(run.classifier_dir())?;
    Ok(vec![run.features_dir(), run.classifier_dir()])
}

pub fn train_model(run: &Run) -> anyhow::Result<Vec<PathBuf>> {
    let train_concepts = run.split(Split::Train)?;
    if train_concepts.is_empty() {
        bail!("no training concepts");
    }
    let mut model = run.cfg.model.clone();
    model.seed = run.seed(model.seed);
    let mut hyper = run.cfg.train.clone();
    hyper.seed = run.seed(hyper.seed);
    let ck = train(&training_set(&train_concepts), &model, run.cfg.schedule, &hyper)?;
    ck.save(run.model_dir())?;
    Ok(vec![run.model_dir()])
}

/// Seed of sample `i` of test concept `k`.
fn sample_seed(run: &Run, k: usize, i: usize) -> u64 {
    run.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((k as u64) << 32 | i as u64)
}

/// Guided samples for every test concept, read from the run directory when
/// already present and generated (and stored) otherwise.
pub fn samples_for(run: &Run, ck: &ModelCheckpoint, tests: &[ConceptSet], gamma: f64) -> anyhow::Result<Vec<Vec<Image>>> {
    let n = run.cfg.metrics.samples_per_concept;
    let root = run.samples_dir(gamma);
    let path = |c: &ConceptSet, i: usize| root.join(&c.concept_id).join(format!("{i:04}.pgm"));
    if tests.iter().all(|c| (0..n).all(|i| path(c, i).is_file())) {
        return tests
            .iter()
            .map(|c| (0..n).map(|i| Ok(Image::load_pgm(path(c, i))?)).collect())
            .collect();
    }
    let contexts: Vec<Option<Vec<f32>>> = tests
        .iter()
        .map(|c| match ck.config.conditioning_mode {
            ConditioningMode::Film => ck.context(std::slice::from_ref(&c.exemplar)).map(Some),
            _ => Ok(None),
        })
        .collect::<osb_core::Result<_>>()?;
    let mut items = Vec::new();
    for (k, c) in tests.iter().enumerate() {
        let cond = match &contexts[k] {
            Some(ctx) => Conditioning::Context(ctx),
            None => Conditioning::Exemplar(&c.exemplar),
        };
        items.extend((0..n).map(|i| (cond, sample_seed(run, k, i))));
    }
    let opts = SampleOptions {
        record: false,
        clip_x0: run.cfg.metrics.clip_x0,
        ..SampleOptions::guided(gamma)
    };
    info!(gamma, count = items.len(), "sampling");
    let images: Vec<Image> = sample_batch(ck, &items, &opts)?.iter().map(|t| t.binary_image()).collect();
    let mut out = Vec::new();
    for (k, c) in tests.iter().enumerate() {
        fs::create_dir_all(root.join(&c.concept_id))?;
        let mine = images[k * n..(k + 1) * n].to_vec();
        for (i, img) in mine.iter().enumerate() {
            img.save_pgm(path(c, i), 255)?;
        }
        out.push(mine);
    }
    Ok(out)
}

pub fn sample(run: &Run, gammas: &[f64]) -> anyhow::Result<Vec<PathBuf>> {
    let ck = run.model()?;
    let tests = run.split(Split::Test)?;
    let mut outputs = Vec::new();
    for &g in gammas {
        samples_for(run, &ck, &tests, g)?;
        outputs.push(run.samples_dir(g));
    }
    Ok(outputs)
}

/// Critics and test concepts shared by the scoring commands.
struct Scoring {
    tests: Vec<ConceptSet>,
    features: FeatureExtractor,
    classifier: PrototypeClassifier,
    prototypes: PrototypeSet<usize>,
    exemplar_features: Vec<osb_core::critics::EmbeddingVector>,
}

impl Scoring {
    fn new(run: &Run) -> anyhow::Result<Self> {
        let tests = run.split(Split::Test)?;
        if tests.is_empty() {
            bail!("no test concepts");
        }
        let features = run.features()?;
        let classifier = run.classifier()?;
        let support: Vec<(usize, Image)> = tests.iter().enumerate().map(|(k, c)| (k, c.exemplar.clone())).collect();
        let prototypes = PrototypeSet::new(&classifier, &support)?;
        let exemplars: Vec<&Image> = tests.iter().map(|c| &c.exemplar).collect();
        let exemplar_features = features.embed_normalized(&exemplars)?;
        Ok(Self {
            tests,
            features,
            classifier,
            prototypes,
            exemplar_features,
        })
    }

    /// Per-sample `(originality, recognized)` for concept `k`.
    fn score(&self, k: usize, samples: &[Image]) -> anyhow::Result<Vec<(f64, bool, osb_core::critics::EmbeddingVector)>> {
        let refs: Vec<&Image> = samples.iter().collect();
        let feats = self.features.embed_normalized(&refs)?;
        let embs = self.classifier.embed_batch(&refs)?;
        feats
            .into_iter()
            .zip(&embs)
            .map(|(f, e)| {
                let o = originality(&f, &self.exemplar_features[k])?;
                Ok((o, self.prototypes.classify(e) == k, f))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct GammaSummary {
    gamma: f64,
    diversity: f64,
    recognizability: f64,
    originality: f64,
    concepts: Vec<ConceptEvaluation>,
}

pub fn evaluate(run: &Run, gammas: &[f64]) -> anyhow::Result<Vec<PathBuf>> {
    let ck = run.model()?;
    let s = Scoring::new(run)?;
    let dir = run.dir.join("eval");
    fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    for &g in gammas {
        let samples = samples_for(run, &ck, &s.tests, g)?;
        let mut evals = Vec::new();
        for (k, c) in s.tests.iter().enumerate() {
            let scored = s.score(k, &samples[k])?;
            let feats: Vec<_> = scored.iter().map(|x| x.2.clone()).collect();
            let n = scored.len() as f64;
            evals.push(ConceptEvaluation {
                concept_id: c.concept_id.clone(),
                diversity: if feats.len() > 1 { diversity(&feats)? } else { 0.0 },
                recognizability: scored.iter().filter(|x| x.1).count() as f64 / n,
                mean_originality: scored.iter().map(|x| x.0).sum::<f64>() / n,
                sample_count: scored.len(),
            });
        }
        let csv = dir.join(format!("gamma-{g}.csv"));
        save_concept_csv(&csv, &evals)?;
        outputs.push(csv);
        let (d, r, o) = osb_core::metrics::mean_over_concepts(&evals).expect("at least one concept");
        summaries.push(GammaSummary {
            gamma: g,
            diversity: d,
            recognizability: r,
            originality: o,
            concepts: evals,
        });
    }
    let json = dir.join("summary.json");
    write_json(&json, &summaries)?;
    let mut csv = String::from("gamma,diversity,recognizability,originality\n");
    for s in &summaries {
        csv.push_str(&format!("{},{},{},{}\n", s.gamma, s.diversity, s.recognizability, s.originality));
    }
    let csv_path = dir.join("summary.csv");
    fs::write(&csv_path, csv)?;
    let png = dir.join("originality_recognizability.png");
    let series: Vec<Series> = summaries
        .iter()
        .map(|s| Series {
            points: s.concepts.iter().map(|c| (c.mean_originality, c.recognizability)).collect(),
            fit: None,
        })
        .collect();
    scatter_png(&png, &series)?;
    outputs.extend([json, csv_path, png]);
    Ok(outputs)
}

pub fn curve(run: &Run, gammas: &[f64]) -> anyhow::Result<Vec<PathBuf>> {
    let ck = run.model()?;
    let s = Scoring::new(run)?;
    let dir = run.dir.join("curve");
    fs::create_dir_all(&dir)?;
    let m = &run.cfg.metrics;
    let mut outputs = Vec::new();
    let mut docs = Vec::new();
    for &g in gammas {
        let samples = samples_for(run, &ck, &s.tests, g)?;
        let mut scored = Vec::new();
        for k in 0..s.tests.len() {
            for (o, recognized, _) in s.score(k, &samples[k])? {
                scored.push(ScoredSample {
                    id: scored.len(),
                    originality: o,
                    recognized,
                });
            }
        }
        let bins = bin_by_originality(&scored, m.n_bins, m.per_bin)?;
        let doc = CurveDocument {
            label: format!("gamma-{g}"),
            curve: fit_generalization_curve(&bins)?,
            bins,
        };
        let path = dir.join(format!("gamma-{g}.json"));
        write_json(&path, &doc)?;
        outputs.push(path);
        docs.push((g, doc));
    }
    let mut csv = String::from("gamma,bin,originality,recognizability,c0,c1,c2,residual\n");
    for (g, d) in &docs {
        let [c0, c1, c2] = d.curve.poly_coeffs;
        for b in &d.bins {
            csv.push_str(&format!(
                "{g},{},{},{},{c0},{c1},{c2},{}\n",
                b.bin_index, b.mean_originality, b.mean_recognizability, d.curve.least_squares_error
            ));
        }
    }
    let csv_path = dir.join("curves.csv");
    fs::write(&csv_path, csv)?;
    let png = dir.join("curves.png");
    let series: Vec<Series> = docs
        .iter()
        .map(|(_, d)| Series {
            points: d.curve.points.iter().map(|p| (p.originality, p.recognizability)).collect(),
            fit: Some(d.curve.poly_coeffs),
        })
        .collect();
    scatter_png(&png, &series)?;
    outputs.extend([csv_path, png]);
    Ok(outputs)
}

pub fn attribute(run: &Run, concept: Option<&str>, gamma: f64, n_samples: usize) -> anyhow::Result<Vec<PathBuf>> {
    let ck = run.model()?;
    let tests = run.split(Split::Test)?;
    let chosen: Vec<&ConceptSet> = match concept {
        Some(id) => vec![tests
            .iter()
            .find(|c| c.concept_id == id)
            .ok_or_else(|| ConfigError(format!("no test concept {id}")))?],
        None => tests.iter().collect(),
    };
    let mut outputs = Vec::new();
    for (k, c) in chosen.iter().enumerate() {
        let seeds: Vec<u64> = (0..n_samples).map(|i| sample_seed(run, k, i)).collect();
        let map = category_importance(&ck, &c.exemplar, &c.concept_id, gamma, &seeds)?;
        let dir = run.dir.join("attribution").join(&c.concept_id);
        map.save(&dir, "map")?;
        outputs.push(dir);
    }
    Ok(outputs)
}

#[derive(Serialize)]
pub struct MapComparison {
    pub rho: f64,
    pub p_value: f64,
}

pub fn compare(model_dir: &Path, human_dir: &Path) -> anyhow::Result<MapComparison> {
    let model = ImportanceMap::load(model_dir, "map")?;
    let human = ImportanceMap::load(human_dir, "map")?;
    let (rho, p_value) = compare_maps(&model, &human)?;
    Ok(MapComparison { rho, p_value })
}

/// Reliability report and per-category human maps from an annotation store.
pub fn clickme_analyze(run: &Run, store_dir: &Path, blur_size: usize) -> anyhow::Result<Vec<PathBuf>> {
    let store = AnnotationStore::open(store_dir)?;
    let records = store.records()?;
    if records.is_empty() {
        bail!("annotation store {} holds no maps", store_dir.display());
    }
    let mut params = run.cfg.reliability.clone();
    params.seed = run.seed(params.seed);
    params.blur_size = blur_size;
    let maps = records
        .iter()
        .map(|r| {
            Ok(AnnotatedMap {
                image_id: r.image_id.clone(),
                participant_id: r.participant_id.clone(),
                map: store.load_map(r)?,
            })
        })
        .collect::<osb_core::Result<Vec<_>>>()?;
    let dir = run.dir.join("clickme");
    fs::create_dir_all(&dir)?;
    let report = reliability_analysis(&maps, &params)?;
    let path = dir.join("reliability.json");
    write_json(&path, &report)?;
    let mut outputs = vec![path];
    let mut by_category: BTreeMap<&str, Vec<Image>> = BTreeMap::new();
    for (r, m) in records.iter().zip(&maps) {
        by_category.entry(&r.category).or_default().push(m.map.clone());
    }
    for (category, ms) in by_category {
        let map = aggregate_maps(&ms, category, blur_size, params.blur_sigma)?;
        let d = dir.join("maps").join(category);
        map.save(&d, "map")?;
        outputs.push(d);
    }
    Ok(outputs)
}
