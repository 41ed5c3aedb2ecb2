// Scratch harness for sizing runs; not part of the test suite.
use std::time::Instant;
use tagspan_core::extract::{evaluate, Extractor};
use tagspan_core::model::ModelConfig;
use tagspan_core::text::generate::{default_schema, generate_corpus};
use tagspan_core::train::data::TRAIN_FRACTION;
use tagspan_core::train::finetune::{run_finetune, FinetuneInit};
use tagspan_core::train::pretrain::run_pretraining;
use tagspan_core::train::{build_vocab, Logger, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_docs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let pre_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let ft_epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(6);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);
    let use_pretrain = pre_epochs > 0;

    let schema = default_schema();
    let t0 = Instant::now();
    let corpus = generate_corpus(n_docs, &schema, 42).unwrap();
    let (train_idx, test_idx) = corpus.split(TRAIN_FRACTION);
    println!("corpus: {} docs ({} train / {} test) in {:?}",
        n_docs, train_idx.len(), test_idx.len(), t0.elapsed());

    let mut log = Logger::quiet();
    let init = if use_pretrain {
        let mut pcfg = TrainConfig::pretrain(seed);
        pcfg.epochs = pre_epochs;
        let t = Instant::now();
        let out = run_pretraining(&corpus, "toy", &pcfg, &mut log, None).unwrap();
        println!("pretrain {} epochs: {:?}  loss {:.3} -> {:.3}",
            pre_epochs, t.elapsed(),
            out.checkpoint.meta.loss_history.first().unwrap_or(&0.0),
            out.checkpoint.meta.loss_history.last().unwrap_or(&0.0));
        FinetuneInit::From(Box::new(out.checkpoint))
    } else {
        FinetuneInit::Fresh
    };

    let mut fcfg = TrainConfig::finetune(seed);
    fcfg.epochs = ft_epochs;
    let t = Instant::now();
    let out = run_finetune(&corpus, init, &ModelConfig::toy(0), &fcfg, &mut log, None).unwrap();
    let h = &out.checkpoint.meta.loss_history;
    println!("finetune {} epochs: {:?}  loss {:.4} -> {:.4} (ratio {:.3})",
        ft_epochs, t.elapsed(), h[0], h[h.len()-1], h[h.len()-1] / h[0]);

    let vocab = build_vocab(&corpus, &train_idx);
    let t = Instant::now();
    let extractor = Extractor::new(&out.checkpoint.params, &vocab);
    let preds = extractor.extract_docs(&corpus, &test_idx).unwrap();
    let docs: Vec<&tagspan_core::text::AnnotatedDocument> =
        test_idx.iter().map(|&i| &corpus.docs[i]).collect();
    let report = evaluate(&preds, &docs, &corpus.schema).unwrap();
    println!("eval in {:?}", t.elapsed());
    println!("overall P={:.3} R={:.3} F1={:.3} abstained={}",
        report.overall.precision, report.overall.recall, report.overall.f1, report.abstentions);
    for (tag, m) in &report.per_tag {
        println!("  tag {tag}: P={:.3} R={:.3} F1={:.3} support={}",
            m.precision, m.recall, m.f1, m.support);
    }
}
