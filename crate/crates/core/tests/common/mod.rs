#![allow(dead_code)]

use pathprompt::config::RunConfig;
use pathprompt::model::ModelConfig;
use pathprompt::pipeline::prepare_world;
use pathprompt::prompt::PromptSample;
use pathprompt::synth::{generate_world, World, WorldConfig};
use pathprompt::tokenizer::Tokenizer;
use pathprompt::MicroLm;

/// Small world and model so that training-based tests finish in seconds.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.world = WorldConfig { n_candidates: 24, n_jobs: 40, labeled_per_candidate: 20, labeled_per_class: 3, ..Default::default() };
    cfg.model = ModelConfig { d_model: 16, n_layers: 1, n_heads: 2, lora_rank: 4, ..Default::default() };
    cfg.train.epochs = 1;
    cfg.ablation.path_counts = vec![0, 1];
    cfg
}

pub struct Prepared {
    pub world: World,
    pub tok: Tokenizer,
    pub model: MicroLm,
    pub train: Vec<PromptSample>,
    pub test: Vec<PromptSample>,
}

pub fn prepared(cfg: &RunConfig) -> Prepared {
    let world = generate_world(&cfg.world).unwrap();
    let (tok, train, test) = prepare_world(cfg, &world).unwrap();
    let model = MicroLm::new(ModelConfig { vocab_size: tok.vocab_size(), ..cfg.model.clone() }).unwrap();
    Prepared { world, tok, model, train, test }
}
