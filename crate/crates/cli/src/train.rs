use std::fmt::Write as _;
use std::path::Path;

use acvis_core::model::LossValues;
use acvis_core::optim::Adam;
use acvis_core::{Model, ModelError, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{sampler_rng, Checkpoint, RngState};
use crate::config::RunConfig;
use crate::corpus::Dataset;
use crate::error::{write, CliError, Result};

pub const LOG_HEADER: &str = "step,L_frame,L_video,L_sim,L_SAOC,total";

/// Batch-mean loss components after one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub losses: LossValues,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let l = &self.losses;
        format!("{},{},{},{},{},{}", self.step, l.frame, l.video, l.sim, l.count, l.total)
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.csv()).expect("writing to a String");
    }
    s
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub log: Vec<LogRow>,
}

impl Trainer {
    /// Fresh model and optimizer for `config`, checked against the corpus it will train on.
    pub fn new(config: &RunConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        config.validate_corpus_fit(&data.config)?;
        if config.train.steps > 0 && data.train.is_empty() {
            return Err(CliError::Config("training split is empty".into()));
        }
        let model = Model::new(config.model.clone(), config.train.seed)?;
        let optimizer = Adam::new(config.optim, &model.params);
        Ok(Trainer {
            config: config.clone(),
            model,
            optimizer,
            rng: sampler_rng(config.train.seed),
            step: 0,
            log: Vec::new(),
        })
    }

    /// One optimizer step on a batch drawn with replacement from the training split.
    pub fn step(&mut self, data: &Dataset) -> Result<LogRow> {
        let step = self.step + 1;
        let nonfinite = |component: &str| CliError::NonFinite {
            step,
            component: component.to_string(),
        };
        let batch = self.config.train.batch_size;
        let mut sum: Option<Vec<Tensor>> = None;
        let mut mean = LossValues::default();
        for _ in 0..batch {
            let sample = &data.train[self.rng.gen_range(0..data.train.len())];
            let (values, grads) = match self.model.loss_and_grads(&sample.clip, &sample.targets, &self.config.loss) {
                Ok(x) => x,
                Err(ModelError::NonFinite { component }) => return Err(nonfinite(component)),
                Err(ModelError::Tensor(TensorError::NonFinite { what })) => return Err(nonfinite(what)),
                Err(e) => return Err(e.into()),
            };
            mean.frame += values.frame;
            mean.video += values.video;
            mean.sim += values.sim;
            mean.count += values.count;
            mean.total += values.total;
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let inv = 1.0 / batch as f64;
        let grads: Vec<Tensor> = sum.expect("batch is non-empty").iter().map(|g| g.map(|x| x * inv)).collect();
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            let id = self.model.params.ids().nth(bad).expect("gradient per parameter");
            return Err(nonfinite(&format!("gradient of {}", self.model.params.name(id))));
        }
        self.optimizer.update(&mut self.model.params, &grads);
        if let Some(bad) = self.model.params.tensors().iter().position(|t| !t.is_finite()) {
            let id = self.model.params.ids().nth(bad).expect("parameter index");
            return Err(nonfinite(&format!("parameter {}", self.model.params.name(id))));
        }
        self.step = step;
        let row = LogRow {
            step,
            losses: LossValues {
                frame: mean.frame * inv,
                video: mean.video * inv,
                sim: mean.sim * inv,
                count: mean.count * inv,
                total: mean.total * inv,
            },
        };
        self.log.push(row);
        Ok(row)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.model,
            &self.config,
            self.step,
            RngState::capture(self.config.train.seed, &self.rng),
            Some(&self.optimizer),
        )
    }

    /// Runs the configured number of steps; `on_checkpoint` sees every interval checkpoint.
    pub fn run(&mut self, data: &Dataset, mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>) -> Result<()> {
        let every = self.config.train.checkpoint_every;
        while self.step < self.config.train.steps {
            self.step(data)?;
            if every > 0 && self.step % every == 0 {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(())
    }
}

/// Trains and writes `checkpoint.json`, `train_log.csv` and any interval checkpoints
/// (`checkpoint_<step>.json`) under `out`.
pub fn train_to_dir(config: &RunConfig, data: &Dataset, out: &Path) -> Result<Trainer> {
    let mut trainer = Trainer::new(config, data)?;
    let result = trainer.run(data, |ck| ck.save(&out.join(format!("checkpoint_{}.json", ck.step))));
    // The log is written even when training aborts, so the failing step can be inspected.
    write(&out.join("train_log.csv"), log_csv(&trainer.log).as_bytes())?;
    result?;
    trainer.checkpoint().save(&out.join("checkpoint.json"))?;
    Ok(trainer)
}
