use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};

use fcgaga_core::model::{ModelConfig, ModelParams};
use fcgaga_core::optim::AdamState;
use fcgaga_core::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FCGACKP\0";
const VERSION: u32 = 1;

/// A restorable training state: model config, parameters, and optionally
/// the optimizer accumulators. Round trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optimizer: Option<AdamState>,
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    for &v in t.data() {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

fn read_tensor(r: &mut impl Read, shape: Vec<usize>) -> Result<Tensor> {
    let len = shape.iter().product::<usize>();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        data.push(f64::from_bits(u64::from_le_bytes(b)));
    }
    Tensor::new(shape, data).map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let config_json = serde_json::to_vec(&ckpt.config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config_json);

    let mut tensors = Vec::new();
    ckpt.params.visit(|_, _, t| tensors.push(t.clone()));
    for t in &tensors {
        push_tensor(&mut buf, t);
    }

    match &ckpt.optimizer {
        None => buf.push(0),
        Some(opt) => {
            buf.push(1);
            buf.extend_from_slice(&opt.learning_rate.to_bits().to_le_bytes());
            buf.extend_from_slice(&opt.beta1.to_bits().to_le_bytes());
            buf.extend_from_slice(&opt.beta2.to_bits().to_le_bytes());
            buf.extend_from_slice(&opt.epsilon.to_bits().to_le_bytes());
            buf.extend_from_slice(&opt.step.to_le_bytes());
            if opt.first_moment.len() != tensors.len() {
                bail!("optimizer accumulators do not mirror the parameters");
            }
            for t in &opt.first_moment {
                push_tensor(&mut buf, t);
            }
            for t in &opt.second_moment {
                push_tensor(&mut buf, t);
            }
        }
    }
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cursor = std::io::Cursor::new(data);

    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("{}: not a checkpoint", path.display());
    }
    let mut b4 = [0u8; 4];
    cursor.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        bail!("{}: unsupported checkpoint version {version}", path.display());
    }
    let mut b8 = [0u8; 8];
    cursor.read_exact(&mut b8)?;
    let json_len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; json_len];
    cursor.read_exact(&mut json)?;
    let config: ModelConfig = serde_json::from_slice(&json).context("checkpoint config")?;
    config.validate().map_err(|e| anyhow::anyhow!("checkpoint config: {e}"))?;

    // shapes come from a scratch init with the same config
    let mut params = ModelParams::init(&config, 0);
    let mut shapes = Vec::new();
    params.visit(|_, _, t| shapes.push(t.shape().to_vec()));
    let mut loaded = Vec::with_capacity(shapes.len());
    for shape in &shapes {
        loaded.push(read_tensor(&mut cursor, shape.clone())?);
    }
    let mut it = loaded.iter();
    params.visit_mut(|t| {
        *t = it.next().expect("shape list mirrors visit order").clone();
    });

    let mut flag = [0u8; 1];
    cursor.read_exact(&mut flag)?;
    let optimizer = if flag[0] == 0 {
        None
    } else {
        let mut f = || -> Result<f64> {
            let mut b = [0u8; 8];
            cursor.read_exact(&mut b)?;
            Ok(f64::from_bits(u64::from_le_bytes(b)))
        };
        let learning_rate = f()?;
        let beta1 = f()?;
        let beta2 = f()?;
        let epsilon = f()?;
        let mut b = [0u8; 8];
        cursor.read_exact(&mut b)?;
        let step = u64::from_le_bytes(b);
        let mut first_moment = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            first_moment.push(read_tensor(&mut cursor, shape.clone())?);
        }
        let mut second_moment = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            second_moment.push(read_tensor(&mut cursor, shape.clone())?);
        }
        Some(AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step,
            first_moment,
            second_moment,
        })
    };

    Ok(Checkpoint {
        config,
        params,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use fcgaga_core::model::GateVariant;

    fn small_checkpoint() -> Checkpoint {
        let mut config = ModelConfig::default_for_nodes(4);
        config.embedding_dim = 3;
        config.hidden_dim = 6;
        config.layers = 2;
        config.gate_variant = GateVariant::SharedLearnable;
        let params = ModelParams::init(&config, 7);
        let optimizer = Some(AdamState::new(&params, 1e-3));
        Checkpoint {
            config,
            params,
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = small_checkpoint();
        save(&ckpt, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn round_trip_without_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut ckpt = small_checkpoint();
        ckpt.optimizer = None;
        save(&ckpt, &path).unwrap();
        assert_eq!(load(&path).unwrap(), ckpt);
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load(&path).is_err());
    }
}
