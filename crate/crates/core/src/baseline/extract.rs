//! Baseline pipeline: training driver, two-step extraction, model file.

use super::featurize::NgramFeaturizer;
use super::mlp::{train_classifier, SentenceClassifier};
use super::regexbook::RegexBook;
use crate::extract::SpanPrediction;
use crate::tensor::Tensor;
use crate::text::corpus::{AnnotatedDocument, Corpus, TagSpec};
use crate::text::tokenize::{char_slice, tokenize};
use crate::train::checkpoint::{write_bytes, write_f32s, write_u32, Reader};
use crate::train::{sub_seed, Logger};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const BASELINE_MAGIC: &[u8; 4] = b"SPFB";
const BASELINE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Positive-class weight cap (positives are rare: one sentence in tens).
    pub max_weight_ratio: f64,
}

impl BaselineConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            dim: 1 << 14,
            hidden: 64,
            epochs: 12,
            batch_size: 64,
            learning_rate: 1e-3,
            seed,
            max_weight_ratio: 50.0,
        }
    }
}

pub struct BaselineModel {
    pub config: BaselineConfig,
    pub featurizer: NgramFeaturizer,
    pub classifiers: BTreeMap<u32, SentenceClassifier>,
}

/// Tokenized sentences and their feature vectors for one document.
struct DocFeatures {
    sentence_ranges: Vec<(usize, usize)>,
    features: Vec<Vec<u32>>,
}

fn doc_features(doc: &AnnotatedDocument, featurizer: &NgramFeaturizer) -> DocFeatures {
    let mut features = Vec::with_capacity(doc.sentences.len());
    for &(s, e) in &doc.sentences {
        let text = char_slice(&doc.text, s, e);
        let toks = tokenize(&text);
        let refs: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        features.push(featurizer.featurize(&refs));
    }
    DocFeatures {
        sentence_ranges: doc.sentences.clone(),
        features,
    }
}

fn sentence_contains(gold: (usize, usize), sentence: (usize, usize)) -> bool {
    gold.0 >= sentence.0 && gold.1 <= sentence.1
}

/// Train one classifier per tag on the given documents.
pub fn train_baseline(
    corpus: &Corpus,
    doc_indices: &[usize],
    cfg: &BaselineConfig,
    logger: &mut Logger,
) -> Result<BaselineModel> {
    let featurizer = NgramFeaturizer::new(cfg.dim, cfg.seed);
    let per_doc: Vec<DocFeatures> = doc_indices
        .iter()
        .map(|&di| doc_features(&corpus.docs[di], &featurizer))
        .collect();

    let mut classifiers = BTreeMap::new();
    for tag in &corpus.schema {
        let mut features: Vec<Vec<u32>> = Vec::new();
        let mut labels: Vec<i32> = Vec::new();
        for (df, &di) in per_doc.iter().zip(doc_indices) {
            let gold = corpus.docs[di]
                .gold
                .get(&tag.tag_id)
                .and_then(|g| g.as_ref());
            for (feat, &range) in df.features.iter().zip(&df.sentence_ranges) {
                let label = gold
                    .map(|g| sentence_contains((g.char_start, g.char_end), range))
                    .unwrap_or(false);
                features.push(feat.clone());
                labels.push(label as i32);
            }
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives == 0 {
            logger.line(&format!(
                "warning: tag {} has no positive sentences; classifier trained anyway",
                tag.tag_id
            ));
        }
        let negatives = labels.len() - positives;
        let ratio = if positives == 0 {
            1.0
        } else {
            (negatives as f64 / positives as f64).min(cfg.max_weight_ratio)
        };
        let clf = train_classifier(
            &features,
            &labels,
            cfg.dim,
            cfg.hidden,
            cfg.epochs,
            cfg.batch_size,
            cfg.learning_rate,
            [1.0, ratio as f32],
            sub_seed(cfg.seed, "baseline-tag", tag.tag_id as u64),
        )?;
        logger.line(&format!(
            "baseline tag={} sentences={} positives={} ratio={ratio:.1}",
            tag.tag_id,
            labels.len(),
            positives
        ));
        classifiers.insert(tag.tag_id, clf);
    }
    Ok(BaselineModel {
        config: cfg.clone(),
        featurizer,
        classifiers,
    })
}

/// Two-step extraction: the classifier picks the most likely sentence; the
/// tag's patterns are applied in order within it. Abstains when no sentence
/// scores positive or no pattern matches.
pub fn baseline_extract(
    doc: &AnnotatedDocument,
    tag: &TagSpec,
    model: &BaselineModel,
    book: &RegexBook,
) -> Result<SpanPrediction> {
    let clf = model
        .classifiers
        .get(&tag.tag_id)
        .ok_or_else(|| Error::Data(format!("no classifier for tag {}", tag.tag_id)))?;
    let df = doc_features(doc, &model.featurizer);
    let mut best: Option<(usize, f32)> = None;
    for (i, feat) in df.features.iter().enumerate() {
        let p = clf.positive_prob(feat);
        if best.map_or(true, |(_, bp)| p > bp) {
            best = Some((i, p));
        }
    }
    let Some((idx, prob)) = best else {
        return Ok(SpanPrediction::abstain(&doc.doc_id, tag.tag_id));
    };
    if prob <= 0.5 {
        return Ok(SpanPrediction::abstain(&doc.doc_id, tag.tag_id));
    }
    let (sent_start, sent_end) = df.sentence_ranges[idx];
    let sentence = char_slice(&doc.text, sent_start, sent_end);
    let Some((cs, ce, value)) = book.extract(tag.dtype, &sentence) else {
        return Ok(SpanPrediction::abstain(&doc.doc_id, tag.tag_id));
    };
    let char_start = sent_start + cs;
    let char_end = sent_start + ce;
    // Token indices of the covered range, for parity with the neural output.
    let tokens = tokenize(&doc.text);
    let start = tokens
        .iter()
        .position(|t| t.end > char_start)
        .unwrap_or(0);
    let end = tokens
        .iter()
        .rposition(|t| t.start < char_end)
        .unwrap_or(start);
    Ok(SpanPrediction {
        doc_id: doc.doc_id.clone(),
        tag_id: tag.tag_id,
        start,
        end,
        score: prob as f64,
        value,
        char_start,
        char_end,
        abstained: false,
    })
}

/// Predictions for every (doc, tag) of the given documents.
pub fn baseline_extract_docs(
    corpus: &Corpus,
    doc_indices: &[usize],
    model: &BaselineModel,
    book: &RegexBook,
) -> Result<Vec<SpanPrediction>> {
    let mut out = Vec::new();
    for &di in doc_indices {
        for tag in &corpus.schema {
            out.push(baseline_extract(&corpus.docs[di], tag, model, book)?);
        }
    }
    Ok(out)
}

pub fn save_baseline(model: &BaselineModel, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(BASELINE_MAGIC);
    write_u32(&mut out, BASELINE_VERSION);
    write_bytes(&mut out, serde_json::to_string(&model.config)?.as_bytes());
    write_u32(&mut out, model.classifiers.len() as u32);
    for (tag_id, clf) in &model.classifiers {
        write_u32(&mut out, *tag_id);
        for t in [&clf.w1.value, &clf.b1.value, &clf.w2.value, &clf.b2.value] {
            write_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                write_u32(&mut out, d as u32);
            }
            write_f32s(&mut out, t.data());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_baseline(path: &Path) -> Result<BaselineModel> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != BASELINE_MAGIC {
        return Err(Error::Format(format!(
            "bad baseline magic {magic:?}, expected {BASELINE_MAGIC:?}"
        )));
    }
    let version = r.u32("version")?;
    if version != BASELINE_VERSION {
        return Err(Error::Format(format!(
            "unsupported baseline version {version}"
        )));
    }
    let config: BaselineConfig = serde_json::from_slice(r.bytes("config")?)?;
    let n = r.u32("classifier count")? as usize;
    let mut classifiers = BTreeMap::new();
    for _ in 0..n {
        let tag_id = r.u32("tag id")?;
        let mut tensors = Vec::with_capacity(4);
        for what in ["w1", "b1", "w2", "b2"] {
            let ndim = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dim")? as usize);
            }
            let count: usize = shape.iter().product();
            let data = r.f32s(count, what)?;
            tensors.push(Tensor::new(shape, data)?);
        }
        let mut it = tensors.into_iter();
        let mut clf = SentenceClassifier::init(config.dim, config.hidden, 0);
        clf.w1.value = it.next().unwrap();
        clf.b1.value = it.next().unwrap();
        clf.w2.value = it.next().unwrap();
        clf.b2.value = it.next().unwrap();
        classifiers.insert(tag_id, clf);
    }
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes in baseline model".into()));
    }
    Ok(BaselineModel {
        featurizer: NgramFeaturizer::new(config.dim, config.seed),
        config,
        classifiers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::generate::{default_schema, generate_corpus};
    use crate::text::DType;

    fn quick_cfg(seed: u64) -> BaselineConfig {
        let mut c = BaselineConfig::new(seed);
        c.epochs = 6;
        c.dim = 1 << 12;
        c
    }

    #[test]
    fn end_to_end_on_small_corpus_extracts_dates_and_misses_codes() {
        let corpus = generate_corpus(16, &default_schema(), 23).unwrap();
        let all: Vec<usize> = (0..corpus.docs.len()).collect();
        let model = train_baseline(&corpus, &all, &quick_cfg(23), &mut Logger::quiet()).unwrap();
        let book = RegexBook::default_book().unwrap();
        let preds = baseline_extract_docs(&corpus, &all, &model, &book).unwrap();
        assert_eq!(preds.len(), corpus.docs.len() * corpus.schema.len());

        let code_tag = corpus.schema.iter().find(|t| t.dtype == DType::Code).unwrap();
        for p in preds.iter().filter(|p| p.tag_id == code_tag.tag_id) {
            assert!(p.abstained, "code tag must never extract");
        }
        // Trained on its own corpus the date tags should mostly hit.
        let date_tag = &corpus.schema[0];
        let mut hits = 0;
        let mut golds = 0;
        for (p, &di) in preds
            .iter()
            .filter(|p| p.tag_id == date_tag.tag_id)
            .zip(&all)
        {
            if let Some(Some(g)) = corpus.docs[di].gold.get(&date_tag.tag_id) {
                golds += 1;
                if !p.abstained && p.value == g.value {
                    hits += 1;
                }
            }
        }
        assert!(golds > 0);
        assert!(
            hits * 2 > golds,
            "date extraction hits {hits} of {golds} golds"
        );
    }

    #[test]
    fn model_file_round_trips() {
        let corpus = generate_corpus(6, &default_schema(), 29).unwrap();
        let all: Vec<usize> = (0..corpus.docs.len()).collect();
        let mut cfg = quick_cfg(29);
        cfg.epochs = 2;
        let model = train_baseline(&corpus, &all, &cfg, &mut Logger::quiet()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("baseline.spfb");
        save_baseline(&model, &path).unwrap();
        let loaded = load_baseline(&path).unwrap();
        assert_eq!(loaded.classifiers.len(), model.classifiers.len());
        for (tag, clf) in &model.classifiers {
            let l = &loaded.classifiers[tag];
            assert_eq!(l.w1.value.data(), clf.w1.value.data());
            assert_eq!(l.b2.value.data(), clf.b2.value.data());
        }
        // Same predictions after reload.
        let book = RegexBook::default_book().unwrap();
        let a = baseline_extract(&corpus.docs[0], &corpus.schema[0], &model, &book).unwrap();
        let b = baseline_extract(&corpus.docs[0], &corpus.schema[0], &loaded, &book).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_positive_sentence_still_trains() {
        let mut corpus = generate_corpus(4, &default_schema(), 31).unwrap();
        // Strip every gold for tag 0.
        for doc in &mut corpus.docs {
            doc.gold.insert(0, None);
        }
        let all: Vec<usize> = (0..corpus.docs.len()).collect();
        let mut cfg = quick_cfg(31);
        cfg.epochs = 1;
        let model = train_baseline(&corpus, &all, &cfg, &mut Logger::quiet()).unwrap();
        assert!(model.classifiers.contains_key(&0));
    }
}
