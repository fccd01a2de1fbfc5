//! Flags and loop shared by train-tagger and train-gen.

use std::ops::ControlFlow;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use metascore_nn::{train, Adam, AdamConfig, AttentionKind, Example, ModelCheckpoint, ModelConfig, TrainConfig, Transformer};
use serde::Serialize;
use serde_json::json;

use crate::util::{in_pool, Ctx};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    Softmax,
    Linear,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 256)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 1024)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value_t = Attention::Softmax)]
    pub attention: Attention,
}

impl ModelArgs {
    pub fn apply(&self, base: ModelConfig) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            d_ff: self.d_ff,
            dropout_rate: self.dropout,
            attention: match self.attention {
                Attention::Softmax => AttentionKind::Softmax,
                Attention::Linear => AttentionKind::Linear,
            },
            ..base
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    /// Optimizer steps to run (added to a resumed checkpoint's count).
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup_steps: u64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print the loss every N steps (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
    /// Continue from a checkpoint holding optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub struct Trained {
    pub model: Transformer,
    pub adam: Adam,
    pub losses: Vec<f64>,
    pub resumed_at: Option<u64>,
}

impl Trained {
    pub fn checkpoint(&self, vocab_hash: &str, seed: u64, extras: serde_json::Value) -> ModelCheckpoint {
        let mut ckpt = ModelCheckpoint::new(&self.model, vocab_hash, seed).with_optimizer(&self.adam);
        ckpt.extras = extras;
        ckpt
    }

    pub fn summary(&self) -> serde_json::Value {
        json!({
            "steps": self.losses.len(),
            "global_step": self.adam.step,
            "resumed_at": self.resumed_at,
            "first_loss": self.losses.first(),
            "final_loss": self.losses.last(),
            "parameters": self.model.params().n_params(),
        })
    }
}

/// Builds (or resumes) a model and trains it on `data`.
pub fn run(ctx: &Ctx, args: &TrainArgs, config: ModelConfig, vocab_hash: &str, data: &[Example]) -> Result<Trained> {
    let optimizer = AdamConfig {
        lr: args.lr,
        warmup_steps: args.warmup_steps,
        clip_norm: args.clip_norm,
        ..AdamConfig::default()
    };
    let (mut model, mut adam, resumed_at) = match &args.resume {
        Some(path) => {
            let ckpt = ModelCheckpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            ckpt.check_vocab(vocab_hash)?;
            let model = ckpt.model()?;
            let adam = match ckpt.optimizer {
                Some(mut a) => {
                    a.config = optimizer.clone();
                    a
                }
                None => Adam::new(optimizer.clone(), model.params()),
            };
            let at = adam.step;
            (model, adam, Some(at))
        }
        None => {
            let model = Transformer::new(config, args.seed)?;
            let adam = Adam::new(optimizer.clone(), model.params());
            (model, adam, None)
        }
    };
    let cfg = TrainConfig { steps: args.steps, batch_size: args.batch_size, seed: args.seed, jobs: ctx.jobs, optimizer };
    let log_every = args.log_every;
    let losses = in_pool(ctx.jobs, || {
        train(&mut model, &mut adam, data, &cfg, |step, loss, stats| {
            if log_every > 0 && (step + 1) % log_every == 0 {
                eprintln!("step {} loss {loss:.4} lr {:.2e} grad_norm {:.3}", step + 1, stats.lr, stats.grad_norm);
            }
            ControlFlow::Continue(())
        })
    })??;
    Ok(Trained { model, adam, losses, resumed_at })
}
