//! Model checkpoint: `AVFM`, version, config JSON, then the flat parameter
//! vector and the input standardization as little-endian `f64`. Binary
//! floats keep the round trip bit-exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EmbedderConfig, EmbedderError, EmbedderParams};
use crate::feature_store::NormalizationParams;

const MAGIC: &[u8; 4] = b"AVFM";
const VERSION: u32 = 1;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EmbedderError + '_ {
    move |e| EmbedderError::Io { path: path.into(), source: e }
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    w.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(params: &EmbedderParams, path: &Path) -> Result<(), EmbedderError> {
    let err = io_err(path);
    let file = std::fs::File::create(path).map_err(&err)?;
    let mut w = BufWriter::new(file);
    let json = serde_json::to_vec(&params.config).expect("config serializes");
    let body = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        write_f64s(&mut w, &params.values)?;
        match &params.normalization {
            Some(n) => {
                w.write_all(&[1])?;
                write_f64s(&mut w, &n.mean)?;
                write_f64s(&mut w, &n.std)?;
                w.write_all(&(n.floored.len() as u64).to_le_bytes())?;
                for j in &n.floored {
                    w.write_all(&(*j as u64).to_le_bytes())?;
                }
            }
            None => w.write_all(&[0])?,
        }
        w.flush()
    })();
    body.map_err(err)
}

struct Cursor<'a> {
    path: &'a Path,
    r: BufReader<std::fs::File>,
}

impl Cursor<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], EmbedderError> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| self.truncated(e))?;
        Ok(b)
    }

    fn truncated(&self, e: std::io::Error) -> EmbedderError {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            self.format("file is truncated")
        } else {
            EmbedderError::Io { path: self.path.into(), source: e }
        }
    }

    fn format(&self, reason: &str) -> EmbedderError {
        EmbedderError::Format { path: self.path.into(), reason: reason.into() }
    }

    fn u64(&mut self) -> Result<u64, EmbedderError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn len(&mut self, limit: u64) -> Result<usize, EmbedderError> {
        let n = self.u64()?;
        if n > limit {
            return Err(self.format(&format!("length {n} exceeds {limit}")));
        }
        Ok(n as usize)
    }

    fn f64s(&mut self, limit: u64) -> Result<Vec<f64>, EmbedderError> {
        let n = self.len(limit)?;
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<EmbedderParams, EmbedderError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut c = Cursor { path, r: BufReader::new(file) };
    if &c.bytes::<4>()? != MAGIC {
        return Err(c.format("not a model checkpoint"));
    }
    let version = u32::from_le_bytes(c.bytes()?);
    if version != VERSION {
        return Err(c.format(&format!("unsupported version {version}")));
    }
    let n = c.len(1 << 24)?;
    let mut json = vec![0u8; n];
    c.r.read_exact(&mut json).map_err(|e| c.truncated(e))?;
    let config: EmbedderConfig = serde_json::from_slice(&json).map_err(|e| c.format(&format!("config: {e}")))?;
    config.validate()?;
    let expected = super::Layout::new(&config).total as u64;
    let values = c.f64s(expected)?;
    let normalization = match c.bytes::<1>()?[0] {
        0 => None,
        1 => {
            let d = config.input_dim as u64;
            let mean = c.f64s(d)?;
            let std = c.f64s(d)?;
            let k = c.len(d)?;
            let floored = (0..k).map(|_| c.u64().map(|v| v as usize)).collect::<Result<_, _>>()?;
            Some(NormalizationParams { mean, std, floored })
        }
        _ => return Err(c.format("bad normalization flag")),
    };
    let mut rest = Vec::new();
    c.r.read_to_end(&mut rest).map_err(io_err(path))?;
    if !rest.is_empty() {
        return Err(c.format("trailing bytes"));
    }
    EmbedderParams::from_values(config, values, normalization)
}
