//! Bit-exact checkpoint format.
//!
//! Layout (little-endian):
//!   magic "SDAN" | u32 version | u32 config length | config key=value text |
//!   u32 tensor count | records | u8 ema flag | optional u32 count + records
//! where each record is: u16 name length | name | u8 dtype | 4 x u32 shape |
//! raw element bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::{model_config_from_text, model_config_to_text, ModelConfig};
use crate::error::{Error, Result};
use crate::model::Sdan;
use crate::tensor::{Dtype, Elem, Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"SDAN";
pub const VERSION: u32 = 1;

/// Named-tensor store with the architecture config and optional EMA shadow.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Elem> {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<T>)>,
    pub ema: Option<Vec<(String, Tensor<T>)>>,
}

impl<T: Elem> Checkpoint<T> {
    pub fn total_elements(&self) -> u64 {
        self.tensors.iter().map(|(_, t)| t.numel() as u64).sum()
    }
}

fn write_tensors<T: Elem>(w: &mut impl Write, tensors: &[(String, Tensor<T>)]) -> std::io::Result<()> {
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[T::DTYPE.byte()])?;
        let s = tensor.shape();
        for extent in [s.n, s.c, s.h, s.w] {
            w.write_all(&(extent as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes_vec())?;
        }
    }
    Ok(())
}

pub fn save<T: Elem>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut run = || -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let config_text = model_config_to_text(&ckpt.config);
        w.write_all(&(config_text.len() as u32).to_le_bytes())?;
        w.write_all(config_text.as_bytes())?;
        write_tensors(&mut w, &ckpt.tensors)?;
        match &ckpt.ema {
            Some(ema) => {
                w.write_all(&[1u8])?;
                write_tensors(&mut w, ema)?;
            }
            None => w.write_all(&[0u8])?,
        }
        w.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

struct Reader<'a, R: Read> {
    inner: R,
    path: &'a Path,
}

impl<'a, R: Read> Reader<'a, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::checkpoint(self.path, "truncated file"))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.bytes(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensors<T: Elem>(&mut self) -> Result<Vec<(String, Tensor<T>)>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = self.u16()? as usize;
            let name = String::from_utf8(self.bytes(name_len)?)
                .map_err(|_| Error::checkpoint(self.path, "tensor name is not UTF-8"))?;
            let dtype = Dtype::from_byte(self.u8()?)
                .ok_or_else(|| Error::checkpoint(self.path, "unknown dtype tag"))?;
            if dtype != T::DTYPE {
                return Err(Error::checkpoint(
                    self.path,
                    format!("tensor '{name}' has dtype {dtype:?}, expected {:?}", T::DTYPE),
                ));
            }
            let n = self.u32()? as usize;
            let c = self.u32()? as usize;
            let h = self.u32()? as usize;
            let w = self.u32()? as usize;
            let shape = Shape::new(n, c, h, w);
            let raw = self.bytes(shape.numel() * dtype.size_bytes())?;
            let data: Vec<T> =
                raw.chunks_exact(dtype.size_bytes()).map(T::from_le_slice).collect();
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::checkpoint(self.path, e.to_string()))?;
            out.push((name, tensor));
        }
        Ok(out)
    }
}

pub fn load<T: Elem>(path: &Path) -> Result<Checkpoint<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { inner: BufReader::new(file), path };
    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(Error::checkpoint(path, "bad magic, not a model checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::checkpoint(
            path,
            format!("unsupported checkpoint version {version}, expected {VERSION}"),
        ));
    }
    let config_len = r.u32()? as usize;
    let config_text = String::from_utf8(r.bytes(config_len)?)
        .map_err(|_| Error::checkpoint(path, "config block is not UTF-8"))?;
    let config = model_config_from_text(&config_text)
        .map_err(|e| Error::checkpoint(path, e.to_string()))?;
    let tensors = r.tensors()?;
    let ema = match r.u8()? {
        0 => None,
        1 => Some(r.tensors()?),
        _ => return Err(Error::checkpoint(path, "bad EMA flag")),
    };
    Ok(Checkpoint { config, tensors, ema })
}

/// Build a model from a checkpoint, preferring EMA weights when present.
pub fn load_model(path: &Path, prefer_ema: bool) -> Result<(Sdan<f32>, Checkpoint<f32>)> {
    let ckpt: Checkpoint<f32> = load(path)?;
    let model = Sdan::new(&ckpt.config, 0)?;
    let weights = match (&ckpt.ema, prefer_ema) {
        (Some(ema), true) => ema,
        _ => &ckpt.tensors,
    };
    model
        .set_named_tensors(weights)
        .map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok((model, ckpt))
}
