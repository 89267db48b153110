use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};

use fcgaga_core::data::SpeedPanel;
use fcgaga_core::tensor::Tensor;

/// CSV schema: header `timestamp,<node>,<node>,...`, one ISO-8601 UTC
/// timestamp plus one speed per node per row.
pub fn load_panel_csv(path: &Path) -> Result<SpeedPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;

    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        bail!("{}: need a timestamp column plus at least one node", path.display());
    }
    let node_ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.with_context(|| format!("{}:{line}", path.display()))?;
        if record.len() != headers.len() {
            bail!(
                "{}:{line}: ragged row, {} fields where {} expected",
                path.display(),
                record.len(),
                headers.len()
            );
        }
        let ts = DateTime::parse_from_rfc3339(&record[0])
            .with_context(|| format!("{}:{line}: bad timestamp {:?}", path.display(), &record[0]))?;
        timestamps.push(ts.with_timezone(&Utc).timestamp());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .with_context(|| format!("{}:{line}: bad speed {field:?}", path.display()))?;
            values.push(v);
        }
    }
    SpeedPanel::new(node_ids, timestamps, values)
        .with_context(|| format!("validating {}", path.display()))
}

pub fn save_panel_csv(panel: &SpeedPanel, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["timestamp".to_owned()];
    header.extend(panel.node_ids().iter().cloned());
    writer.write_record(&header)?;
    for (t, &ts) in panel.timestamps().iter().enumerate() {
        let stamp = DateTime::<Utc>::from_timestamp(ts, 0)
            .context("timestamp out of range")?
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let mut row = vec![stamp];
        for n in 0..panel.num_nodes() {
            row.push(format_speed(panel.value(t, n)));
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Full f64 precision so a CSV round trip stays bit-exact.
fn format_speed(v: f64) -> String {
    let mut s = format!("{v}");
    if s.parse::<f64>().map(f64::to_bits) != Ok(v.to_bits()) {
        s = format!("{v:?}");
    }
    s
}

const CACHE_MAGIC: &[u8; 8] = b"FCGAPNL\0";
const CACHE_VERSION: u32 = 1;

/// Binary cache: magic, version, N, T, node-id table, timestamps,
/// row-major values. All integers and floats little-endian.
pub fn save_panel_cache(panel: &SpeedPanel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(panel.num_nodes() as u64).to_le_bytes());
    buf.extend_from_slice(&(panel.num_steps() as u64).to_le_bytes());
    for id in panel.node_ids() {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    for &ts in panel.timestamps() {
        buf.extend_from_slice(&ts.to_le_bytes());
    }
    for &v in panel.values() {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_panel_cache(path: &Path) -> Result<SpeedPanel> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cursor = std::io::Cursor::new(data);

    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        bail!("{}: not a panel cache", path.display());
    }
    let version = read_u32(&mut cursor)?;
    if version != CACHE_VERSION {
        bail!("{}: unsupported cache version {version}", path.display());
    }
    let n = read_u64(&mut cursor)? as usize;
    let t = read_u64(&mut cursor)? as usize;
    let mut node_ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = read_u32(&mut cursor)? as usize;
        let mut bytes = vec![0u8; len];
        cursor.read_exact(&mut bytes)?;
        node_ids.push(String::from_utf8(bytes).context("node id not utf-8")?);
    }
    let mut timestamps = Vec::with_capacity(t);
    for _ in 0..t {
        let mut b = [0u8; 8];
        cursor.read_exact(&mut b)?;
        timestamps.push(i64::from_le_bytes(b));
    }
    let mut values = Vec::with_capacity(t * n);
    for _ in 0..t * n {
        let mut b = [0u8; 8];
        cursor.read_exact(&mut b)?;
        values.push(f64::from_bits(u64::from_le_bytes(b)));
    }
    SpeedPanel::new(node_ids, timestamps, values)
        .with_context(|| format!("validating {}", path.display()))
}

pub fn load_panel(path: &Path, format: &str) -> Result<SpeedPanel> {
    match format {
        "csv" => load_panel_csv(path),
        "binary_cache" => load_panel_cache(path),
        other => bail!("unknown dataset format {other:?}"),
    }
}

/// Square adjacency CSV: header `node,<id>,...`, one labeled row per node.
pub fn save_adjacency_csv(adj: &Tensor, node_ids: &[String], path: &Path) -> Result<()> {
    let n = adj.rows();
    if node_ids.len() != n || adj.cols() != n {
        bail!("adjacency is {n}x{} for {} node ids", adj.cols(), node_ids.len());
    }
    let mut out = String::from("node");
    for id in node_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&node_ids[i]);
        for j in 0..n {
            out.push(',');
            out.push_str(&format_speed(adj.at(i, j)));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_adjacency_csv(path: &Path) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let n = reader.headers()?.len() - 1;
    let mut data = Vec::with_capacity(n * n);
    for record in reader.records() {
        let record = record?;
        for field in record.iter().skip(1) {
            data.push(field.parse::<f64>()?);
        }
    }
    Tensor::matrix(n, n, data).map_err(|e| anyhow::anyhow!("{e}"))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
