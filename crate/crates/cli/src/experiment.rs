//! Ablation runs: train several model variants on one corpus and score them on the
//! validation split.

use acvis_core::model::{CountLoss, FusionKind};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{Dataset, Split};
use crate::error::Result;
use crate::eval::{evaluate_files, EvalReport};
use crate::infer::predict_all;
use crate::train::{LogRow, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Audio-centric queries and ordinal counting.
    Full,
    /// Audio-centric queries, counting term reported but unweighted.
    NoSaoc,
    /// Additive audio fusion with ordinal counting.
    NoAcqg,
    /// Additive audio fusion without counting.
    Baseline,
    /// Audio-centric queries with categorical cross-entropy counting.
    CountCe,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoSaoc, Variant::NoAcqg, Variant::Baseline, Variant::CountCe];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSaoc => "no_saoc",
            Variant::NoAcqg => "no_acqg",
            Variant::Baseline => "baseline",
            Variant::CountCe => "count_ce",
        }
    }

    /// `base` with fusion and count loss set for this variant and the given seed.
    pub fn configure(self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut c = base.clone();
        c.train.seed = seed;
        let (fusion, count) = match self {
            Variant::Full => (FusionKind::AudioCentric, CountLoss::Saoc),
            Variant::NoSaoc => (FusionKind::AudioCentric, CountLoss::None),
            Variant::NoAcqg => (FusionKind::Additive, CountLoss::Saoc),
            Variant::Baseline => (FusionKind::Additive, CountLoss::None),
            Variant::CountCe => (FusionKind::AudioCentric, CountLoss::CrossEntropy),
        };
        c.model.fusion = fusion;
        c.model.count_loss = count;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub first_total: f64,
    pub last_total: f64,
    pub report: EvalReport,
}

/// Trains `config` on the training split and evaluates on validation, all in memory.
pub fn run(config: &RunConfig, data: &Dataset) -> Result<(Trainer, EvalReport)> {
    let mut trainer = Trainer::new(config, data)?;
    trainer.run(data, |_| Ok(()))?;
    let pred = predict_all(&trainer.model, &data.val, config.threshold)?;
    let gt = data.truth(Split::Val);
    let here = std::path::Path::new("<memory>");
    let report = evaluate_files(&gt, here, &pred, here)?;
    Ok((trainer, report))
}

pub fn run_variant(base: &RunConfig, data: &Dataset, variant: Variant, seed: u64) -> Result<RunResult> {
    let (trainer, report) = run(&variant.configure(base, seed), data)?;
    let total = |r: Option<&LogRow>| r.map_or(f64::NAN, |r| r.losses.total);
    Ok(RunResult {
        variant,
        seed,
        first_total: total(trainer.log.first()),
        last_total: total(trainer.log.last()),
        report,
    })
}

pub const RESULTS_HEADER: &str =
    "variant,seed,first_total,last_total,mAP,HOTA,FSLA,FSLAn,FSLAs,FSLAm,count_mae,count_mae_multi,instance_count_mae,instance_count_mae_multi";

impl RunResult {
    pub fn csv(&self) -> String {
        let m = &self.report.metrics;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.variant.name(),
            self.seed,
            self.first_total,
            self.last_total,
            m.map,
            m.hota,
            m.fsla,
            m.fsla_n,
            m.fsla_s,
            m.fsla_m,
            opt(self.report.count_mae),
            opt(self.report.count_mae_multi),
            self.report.instance_count_mae,
            opt(self.report.instance_count_mae_multi),
        )
    }
}
