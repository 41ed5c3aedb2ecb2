//! End-to-end extraction: window a document per tag, run the model, decode,
//! aggregate, and recover value strings.

use super::decode::{aggregate, decode_window, recover_text, WindowCandidate, DEFAULT_MAX_SPAN};
use super::SpanPrediction;
use crate::model::{Batch, ModelParams};
use crate::tensor::ops::softmax;
use crate::tensor::Tensor;
use crate::text::corpus::{AnnotatedDocument, Corpus, TagSpec};
use crate::text::tokenize::{tokenize, Token};
use crate::text::vocab::Vocab;
use crate::text::window::PackedWindow;
use crate::train::data::windows_for_doc_tag;
use crate::Result;

pub struct Extractor<'a> {
    pub params: &'a ModelParams<f32>,
    pub vocab: &'a Vocab,
    pub max_span: usize,
    pub batch_size: usize,
    pub stride: Option<usize>,
}

impl<'a> Extractor<'a> {
    pub fn new(params: &'a ModelParams<f32>, vocab: &'a Vocab) -> Self {
        Self {
            params,
            vocab,
            max_span: DEFAULT_MAX_SPAN,
            batch_size: 32,
            stride: None,
        }
    }

    /// Per-token class distributions for a set of windows, batched.
    fn window_probs(&self, windows: &[PackedWindow]) -> Result<Vec<Tensor<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(self.batch_size) {
            let refs: Vec<&PackedWindow> = chunk.iter().collect();
            let batch = Batch::from_windows(&refs);
            let (logits, _) = self.params.span_forward(&batch, None)?;
            let len = batch.len;
            for (i, _w) in chunk.iter().enumerate() {
                let rows: Vec<f64> = logits.data()[i * len * 3..(i + 1) * len * 3]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let probs = softmax(&Tensor::new(vec![len, 3], rows)?, None)?;
                out.push(probs);
            }
        }
        Ok(out)
    }

    /// Extract every schema tag from one document.
    pub fn extract_doc(
        &self,
        doc_id: &str,
        text: &str,
        schema: &[TagSpec],
    ) -> Result<Vec<SpanPrediction>> {
        let tokens: Vec<Token> = tokenize(text);
        let doc_ids: Vec<u32> = tokens.iter().map(|t| self.vocab.id_of(&t.text)).collect();
        let mut predictions = Vec::with_capacity(schema.len());
        for tag in schema {
            let windows = windows_for_doc_tag(
                &doc_ids,
                tag,
                self.vocab,
                self.params.config.window_len,
                self.stride,
            )?;
            let probs = self.window_probs(&windows)?;
            let candidates: Vec<Option<WindowCandidate>> = windows
                .iter()
                .zip(&probs)
                .map(|(w, p)| {
                    decode_window(
                        p,
                        w.doc_offset..w.doc_offset + w.doc_len(),
                        self.max_span,
                    )
                })
                .collect::<Result<_>>()?;
            match aggregate(&windows, &candidates) {
                Some(span) => {
                    predictions.push(recover_text(doc_id, tag.tag_id, span, text, &tokens))
                }
                None => predictions.push(SpanPrediction::abstain(doc_id, tag.tag_id)),
            }
        }
        Ok(predictions)
    }

    /// Extract from a set of corpus documents (evaluation splits).
    pub fn extract_docs(
        &self,
        corpus: &Corpus,
        doc_indices: &[usize],
    ) -> Result<Vec<SpanPrediction>> {
        let mut out = Vec::new();
        for &di in doc_indices {
            let doc: &AnnotatedDocument = &corpus.docs[di];
            out.extend(self.extract_doc(&doc.doc_id, &doc.text, &corpus.schema)?);
        }
        Ok(out)
    }
}
