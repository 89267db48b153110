use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use fcgaga_core::data::{self, SpeedPanel, WindowBatch};
use fcgaga_core::metrics::{
    masked_mae_loss, weight_decay_penalty, MetricAccumulator, MetricsReport,
};
use fcgaga_core::model::{
    model_forward, ModelConfig, ModelParams, ModelVars, ParamKind,
};
use fcgaga_core::optim::{lr_schedule, AdamState};
use fcgaga_core::{Tape, Tensor};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;

/// Forecast steps reported at a 5-minute sampling interval: 15, 30 and
/// 60 minutes out.
pub const REPORT_STEPS: [usize; 3] = [3, 6, 12];

const EVAL_CHUNK: usize = 64;

/// Owns the parameters and optimizer across steps; the epoch loop in
/// [`train`] and the acceptance harness both drive it.
pub struct Trainer {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub weight_decay: f64,
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    /// Cumulative forward+backward FLOPs over all steps.
    pub flops: u128,
}

impl Trainer {
    pub fn new(config: ModelConfig, seed: u64, weight_decay: f64) -> Self {
        let params = ModelParams::init(&config, seed);
        let optimizer = AdamState::new(&params, lr_schedule(1));
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        params.visit(|name, kind, _| {
            names.push(name);
            kinds.push(kind);
        });
        Trainer {
            config,
            params,
            optimizer,
            weight_decay,
            names,
            kinds,
            flops: 0,
        }
    }

    /// One optimizer step on one batch; returns the data term (masked
    /// MAE without the decay penalty) for logging.
    pub fn train_step(&mut self, batch: &WindowBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &self.params, true);
        let mut forecasts = Vec::with_capacity(batch.anchors.len());
        for (x, tf) in batch.histories.iter().zip(&batch.input_time_features) {
            let xv = tape.constant(x.clone());
            let tfv = tape.constant(tf.clone());
            let out = model_forward(&mut tape, &vars, xv, tfv, &self.config)
                .map_err(|e| anyhow::anyhow!("forward: {e}"))?;
            forecasts.push(out.forecast);
        }
        let targets: Vec<&Tensor> = batch.targets.iter().collect();
        let data_term = masked_mae_loss(&mut tape, &forecasts, &targets)
            .map_err(|e| anyhow::anyhow!("loss: {e}"))?;
        let penalty = weight_decay_penalty(&mut tape, &vars.flat, &self.kinds, self.weight_decay)
            .map_err(|e| anyhow::anyhow!("decay: {e}"))?;
        let loss = tape
            .add(data_term, penalty)
            .map_err(|e| anyhow::anyhow!("loss: {e}"))?;

        let data_value = tape.value(data_term).data()[0];
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            anyhow::bail!("non-finite training loss {loss_value}");
        }
        tape.backward(loss).map_err(|e| anyhow::anyhow!("backward: {e}"))?;
        let grads: Vec<Option<Tensor>> = vars.flat.iter().map(|&v| tape.grad(v)).collect();
        self.optimizer
            .step(&mut self.params, &grads, &self.names)
            .map_err(|e| anyhow::anyhow!("optimizer: {e}"))?;
        self.flops += tape.flops().total() as u128;
        Ok(data_value)
    }

    pub fn steps_taken(&self) -> u64 {
        self.optimizer.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }
}

/// Masked per-horizon metrics over every valid anchor of `range`,
/// exhaustively and in order.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    panel: &SpeedPanel,
    range: (usize, usize),
) -> Result<MetricsReport> {
    let steps: Vec<usize> = REPORT_STEPS
        .iter()
        .copied()
        .filter(|&s| s <= config.horizon)
        .collect();
    let mut accs = vec![MetricAccumulator::default(); steps.len()];
    let batches = data::eval_batches(
        panel,
        range,
        config.history,
        config.horizon,
        &config.time_features,
        EVAL_CHUNK,
    )
    .map_err(|e| anyhow::anyhow!("evaluation anchors: {e}"))?;
    for batch in &batches {
        for ((x, tf), y) in batch
            .histories
            .iter()
            .zip(&batch.input_time_features)
            .zip(&batch.targets)
        {
            let forecast = fcgaga_core::model::predict(params, config, x, tf)
                .map_err(|e| anyhow::anyhow!("forward: {e}"))?;
            for (si, &step) in steps.iter().enumerate() {
                for node in 0..config.nodes {
                    accs[si].push(y.at(node, step - 1), forecast.at(node, step - 1));
                }
            }
        }
    }
    let minutes_per_step = (panel.step_seconds() / 60) as u64;
    let horizons = steps
        .iter()
        .zip(&accs)
        .map(|(&step, acc)| acc.finish(step, step as u64 * minutes_per_step))
        .collect();
    Ok(MetricsReport { horizons })
}

/// One line of the training log, serialized as line-delimited JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val: MetricsReport,
    pub wall_seconds: f64,
    pub cumulative_flops: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: u32,
    pub best_val_mean_mae: f64,
    pub optimizer_steps: u64,
    pub total_flops: u128,
}

/// Full training run: epochs x batches_per_epoch Adam steps under the
/// annealing schedule, per-epoch validation, best-checkpoint retention.
/// On a non-finite loss the last written checkpoint is kept and the run
/// aborts with an error.
pub fn train(run: &RunConfig, panel: &SpeedPanel, out_dir: &Path) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir)?;
    let config = run.model_config(panel.num_nodes())?;
    let splits = data::split(panel, &run.split_spec(), config.history, config.horizon)
        .map_err(|e| anyhow::anyhow!("split: {e}"))?;

    let mut trainer = Trainer::new(config.clone(), run.seed, run.weight_decay);
    let mut sampler = fcgaga_core::rng::seeded(run.seed ^ 0x5a5a_5a5a_5a5a_5a5a);

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;
    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");

    let mut summary = TrainSummary {
        epochs: Vec::with_capacity(run.epochs as usize),
        best_epoch: 0,
        best_val_mean_mae: f64::INFINITY,
        optimizer_steps: 0,
        total_flops: 0,
    };
    let started = Instant::now();

    for epoch in 1..=run.epochs {
        trainer.optimizer.learning_rate = lr_schedule(epoch);
        let batches = data::sample_epoch(
            panel,
            splits.train,
            config.history,
            config.horizon,
            &config.time_features,
            &mut sampler,
            run.batches_per_epoch,
            run.batch_size,
        )
        .map_err(|e| anyhow::anyhow!("training anchors: {e}"))?;

        let mut loss_sum = 0.0;
        for batch in &batches {
            match trainer.train_step(batch) {
                Ok(loss) => loss_sum += loss,
                Err(e) => {
                    // keep whatever checkpoint was last written
                    return Err(e.context(format!(
                        "aborting at epoch {epoch}; last good checkpoint: {}",
                        last_path.display()
                    )));
                }
            }
        }
        let train_loss = loss_sum / batches.len() as f64;

        let val = evaluate(&trainer.params, &config, panel, splits.val)?;
        let record = EpochRecord {
            epoch,
            learning_rate: trainer.optimizer.learning_rate,
            train_loss,
            val: val.clone(),
            wall_seconds: started.elapsed().as_secs_f64(),
            cumulative_flops: trainer.flops,
        };
        use std::io::Write;
        writeln!(log, "{}", serde_json::to_string(&record)?)?;
        summary.epochs.push(record);

        checkpoint::save(&trainer.checkpoint(), &last_path)?;
        let mean_mae = val.mean_mae();
        if mean_mae < summary.best_val_mean_mae {
            summary.best_val_mean_mae = mean_mae;
            summary.best_epoch = epoch;
            checkpoint::save(&trainer.checkpoint(), &best_path)?;
        }
    }
    summary.optimizer_steps = trainer.steps_taken();
    summary.total_flops = trainer.flops;
    Ok(summary)
}
