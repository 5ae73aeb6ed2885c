//! Small encoded batches from the synthetic corpus, one per task.

use vulnhunter::corpus::{generate_synthetic, SyntheticSpec};
use vulnhunter::model::{Example, ModelConfig, Target, TaskSpec};
use vulnhunter::tokenizer::{SeqMode, Vocab};

/// Tiny-preset config and three examples for `task`.
pub fn batch(task: TaskSpec) -> (ModelConfig, Vec<Example>) {
    let (records, registry) = generate_synthetic(&SyntheticSpec::new(12, 4, 2, 3)).unwrap();
    let texts: Vec<&str> = records.iter().map(|r| r.code.as_str()).collect();
    let vocab = Vocab::train(&texts, 320).unwrap();
    let mut cfg = ModelConfig::tiny(vocab.vocab_size(), registry.n_ids(), registry.n_types());
    cfg.max_seq_len = 24;
    let mode = match task {
        TaskSpec::Multitask => SeqMode::DualCls,
        _ => SeqMode::SingleCls,
    };
    let examples = records
        .iter()
        .filter(|r| task == TaskSpec::Detect || r.vulnerable)
        .take(3)
        .map(|r| Example {
            seq: vocab.encode(&r.code, mode, cfg.max_seq_len),
            target: match task {
                TaskSpec::Multitask => Target::Multitask {
                    cwe_id: registry.id_index(r.cwe_id.as_deref().unwrap()).unwrap(),
                    cwe_type: registry.type_index(r.cwe_type.as_deref().unwrap()).unwrap(),
                },
                TaskSpec::Detect => Target::Detect(r.vulnerable),
                TaskSpec::Regress => Target::Regress(r.cvss.unwrap()),
            },
        })
        .collect();
    (cfg, examples)
}
