//! Checkpoint format: one text line `GREPSNET-CKPT <model spec>`, then the
//! parameter count as a little-endian `u64` and every parameter as a
//! little-endian `f64`, in declaration order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{build_model, Model, ModelSpec};
use crate::error::{Error, Result};

const MAGIC: &str = "GREPSNET-CKPT";

pub fn save_checkpoint(model: &dyn Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC} {}", model.spec())?;
    let flat = model.params().flatten();
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_header(r: &mut impl BufRead) -> Result<ModelSpec> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    line.trim_end()
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Format("not a checkpoint file".into()))?
        .trim()
        .parse()
}

/// The model spec stored in a checkpoint header.
pub fn read_checkpoint_spec(path: &Path) -> Result<ModelSpec> {
    read_header(&mut BufReader::new(File::open(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Box<dyn Model>> {
    let mut r = BufReader::new(File::open(path)?);
    let spec = read_header(&mut r)?;
    let mut model = build_model(&spec, 0)?;
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf) as usize;
    if n != model.params().count() {
        return Err(Error::Format(format!(
            "checkpoint holds {n} parameters, model needs {}",
            model.params().count()
        )));
    }
    let mut flat = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        flat.push(f64::from_le_bytes(buf));
    }
    model.params_mut().load_flat(&flat)?;
    Ok(model)
}
