//! Checkpoint directories: `metadata.json`, one little-endian `f32` blob per
//! named parameter under `params/`, and an optional `loss.csv`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{Module, Param, ParamSpec};

pub const METADATA_FILE: &str = "metadata.json";
pub const LOSS_FILE: &str = "loss.csv";
const PARAM_DIR: &str = "params";

fn blob_name(param: &str) -> String {
    format!("{}.bin", param.replace('/', "_"))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes every parameter of `modules` as a blob. Names must be unique.
pub fn save_params(dir: impl AsRef<Path>, params: &[&Param]) -> Result<Vec<ParamSpec>> {
    let pdir = dir.as_ref().join(PARAM_DIR);
    fs::create_dir_all(&pdir)?;
    let mut specs = Vec::with_capacity(params.len());
    for p in params {
        if specs.iter().any(|s: &ParamSpec| s.name == p.name) {
            return Err(Error::State(format!("duplicate parameter name {}", p.name)));
        }
        let mut bytes = Vec::with_capacity(p.len() * 4);
        for v in &p.value {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(pdir.join(blob_name(&p.name)), bytes)?;
        specs.push(ParamSpec {
            name: p.name.clone(),
            shape: p.shape.clone(),
        });
    }
    Ok(specs)
}

/// Fills `params` from blobs, checking names and shapes against `specs`.
pub fn load_params(dir: impl AsRef<Path>, specs: &[ParamSpec], params: Vec<&mut Param>) -> Result<()> {
    if specs.len() != params.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} parameters, model has {}",
            specs.len(),
            params.len()
        )));
    }
    let pdir = dir.as_ref().join(PARAM_DIR);
    for p in params {
        let spec = specs
            .iter()
            .find(|s| s.name == p.name)
            .ok_or_else(|| Error::Format(format!("parameter {} missing from checkpoint", p.name)))?;
        if spec.shape != p.shape {
            return Err(Error::Format(format!(
                "parameter {} has shape {:?} in checkpoint, model expects {:?}",
                p.name, spec.shape, p.shape
            )));
        }
        let bytes = fs::read(pdir.join(blob_name(&p.name)))?;
        if bytes.len() != p.len() * 4 {
            return Err(Error::Format(format!(
                "blob for {} has {} bytes, expected {}",
                p.name,
                bytes.len(),
                p.len() * 4
            )));
        }
        for (v, chunk) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    }
    Ok(())
}

pub fn save_module(dir: impl AsRef<Path>, module: &dyn Module) -> Result<Vec<ParamSpec>> {
    save_params(dir, &module.params())
}

pub fn load_module(dir: impl AsRef<Path>, specs: &[ParamSpec], module: &mut dyn Module) -> Result<()> {
    load_params(dir, specs, module.params_mut())
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "step,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(f, "{i},{l}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let loss = line
            .split(',')
            .nth(1)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Format(format!("bad loss.csv line {}: {line}", i + 1)))?;
        out.push(loss);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip_and_shape_checked() {
        let dir = tempfile::tempdir().unwrap();
        let a = Param::new("a.w", vec![2, 2], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE]);
        let b = Param::new("b", vec![1], vec![7.0]);
        let specs = save_params(dir.path(), &[&a, &b]).unwrap();
        let mut a2 = Param::constant("a.w", vec![2, 2], 0.0);
        let mut b2 = Param::constant("b", vec![1], 0.0);
        load_params(dir.path(), &specs, vec![&mut b2, &mut a2]).unwrap();
        assert_eq!(a2.value, a.value);
        assert_eq!(b2.value, b.value);

        let mut wrong = Param::constant("b", vec![2], 0.0);
        let mut a3 = a2.clone();
        assert!(load_params(dir.path(), &specs, vec![&mut a3, &mut wrong]).is_err());
    }

    #[test]
    fn blobs_are_little_endian_f32() {
        let dir = tempfile::tempdir().unwrap();
        save_params(dir.path(), &[&Param::new("x", vec![1], vec![1.0])]).unwrap();
        let bytes = fs::read(dir.path().join("params/x.bin")).unwrap();
        assert_eq!(bytes, [0x00, 0x00, 0x80, 0x3f]);
    }

    #[test]
    fn loss_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(LOSS_FILE);
        write_loss_csv(&p, &[1.5, 0.25, 0.125]).unwrap();
        assert_eq!(read_loss_csv(&p).unwrap(), vec![1.5, 0.25, 0.125]);
        assert!(fs::read_to_string(&p).unwrap().starts_with("step,loss\n0,1.5\n"));
    }
}
