use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use fcgaga_core::data::WindowBatch;
use fcgaga_core::model::{layer_gate_matrix, model_forward, ModelVars};
use fcgaga_core::synth::ranked_neighbors;
use fcgaga_core::Tape;

use crate::checkpoint::Checkpoint;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Per-layer gate weight matrices as labeled CSVs. Returns the files
/// written.
pub fn export_weights(
    ckpt: &Checkpoint,
    node_ids: &[String],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for layer in 0..ckpt.config.layers {
        let w = layer_gate_matrix(&ckpt.params, &ckpt.config, layer)
            .map_err(|e| anyhow::anyhow!("gate weights: {e}"))?;
        let path = out_dir.join(format!("weights_layer_{}.csv", layer + 1));
        crate::panel_io::save_adjacency_csv(&w, node_ids, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Neighbor rankings per layer: every node's peers ordered by the
/// self-normalized gate weight W[i,j] / W[i,i].
pub fn export_rankings(
    ckpt: &Checkpoint,
    node_ids: &[String],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for layer in 0..ckpt.config.layers {
        let w = layer_gate_matrix(&ckpt.params, &ckpt.config, layer)
            .map_err(|e| anyhow::anyhow!("gate weights: {e}"))?;
        let mut out = String::from("node,rank,neighbor,normalized_weight\n");
        for i in 0..ckpt.config.nodes {
            for (rank, (j, nw)) in ranked_neighbors(&w, i).iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{nw}\n",
                    node_ids[i],
                    rank + 1,
                    node_ids[*j]
                ));
            }
        }
        let path = out_dir.join(format!("rankings_layer_{}.csv", layer + 1));
        write_file(&path, &out)?;
        written.push(path);
    }
    Ok(written)
}

/// Layer-wise forecast decomposition for one window. Each layer column
/// is scaled by 1/M so the columns sum to the final forecast, which is
/// also emitted for checking the identity from the file alone.
pub fn export_decomposition(
    ckpt: &Checkpoint,
    batch: &WindowBatch,
    node_ids: &[String],
    out_dir: &Path,
) -> Result<PathBuf> {
    let x = &batch.histories[0];
    let tf = &batch.input_time_features[0];
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, &ckpt.params, false);
    let xv = tape.constant(x.clone());
    let tfv = tape.constant(tf.clone());
    let out = model_forward(&mut tape, &vars, xv, tfv, &ckpt.config)
        .map_err(|e| anyhow::anyhow!("forward: {e}"))?;

    let scale = 1.0 / ckpt.config.layers as f64;
    let mut text = String::from("node,step");
    for m in 0..ckpt.config.layers {
        text.push_str(&format!(",layer_{}", m + 1));
    }
    text.push_str(",total\n");
    for node in 0..ckpt.config.nodes {
        for step in 0..ckpt.config.horizon {
            text.push_str(&format!("{},{}", node_ids[node], step + 1));
            for &layer_var in &out.layer_forecasts {
                let v = tape.value(layer_var).at(node, step) * scale;
                text.push_str(&format!(",{v}"));
            }
            let total = tape.value(out.forecast).at(node, step);
            text.push_str(&format!(",{total}\n"));
        }
    }
    let path = out_dir.join("decomposition.csv");
    write_file(&path, &text)?;
    Ok(path)
}

/// Metrics CSV in the reporting schema: horizon, mae, mape_pct, rmse,
/// count.
pub fn export_metrics(
    report: &fcgaga_core::metrics::MetricsReport,
    path: &Path,
) -> Result<()> {
    let mut out = String::from("horizon_minutes,mae,mape_pct,rmse,count\n");
    for h in &report.horizons {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.minutes, h.mae, h.mape_pct, h.rmse, h.count
        ));
    }
    write_file(path, &out)
}
