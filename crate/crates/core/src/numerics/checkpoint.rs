//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MRCKPT01"
//! meta_len   u32      length of the metadata block
//! meta       bytes    UTF-8 text (TOML: run metadata and config)
//! count      u32      number of tensors
//! repeated `count` times:
//!   name_len u16, name (UTF-8)
//!   ndim     u8, dims (u32 each)
//!   data     prod(dims) x f32
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::optim::RmsProp;
use super::params::ParamSet;
use super::tensor::Tensor;
use super::NumericsError;

const MAGIC: &[u8; 8] = b"MRCKPT01";
const OPT_PREFIX: &str = "rmsprop/";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(meta: String, params: &ParamSet, optimizer: Option<&RmsProp>) -> Self {
        let mut tensors: Vec<NamedTensor> = params
            .iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape.clone(),
                data: t.data.iter().map(|&v| v as f32).collect(),
            })
            .collect();
        if let Some(opt) = optimizer {
            for (id, name, t) in params.iter() {
                tensors.push(NamedTensor {
                    name: format!("{OPT_PREFIX}{name}"),
                    shape: t.shape.clone(),
                    data: opt.accumulator(id).iter().map(|&v| v as f32).collect(),
                });
            }
        }
        Checkpoint { meta, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Overwrites every tensor of `params` with the stored values; shapes
    /// must match exactly.
    pub fn load_into(&self, params: &mut ParamSet) -> Result<(), NumericsError> {
        for id in params.ids().collect::<Vec<_>>() {
            let name = params.name(id).to_string();
            let stored = self.get(&name).ok_or_else(|| NumericsError::Checkpoint(format!("missing tensor {name}")))?;
            let t = params.get_mut(id);
            if stored.shape != t.shape {
                return Err(NumericsError::Checkpoint(format!(
                    "tensor {name}: stored shape {:?}, expected {:?}",
                    stored.shape, t.shape
                )));
            }
            t.data = stored.data.iter().map(|&v| v as f64).collect();
        }
        Ok(())
    }

    /// Optimizer accumulators for `params`, if the checkpoint carries them.
    pub fn optimizer(&self, params: &ParamSet, decay: f64, eps: f64) -> Option<RmsProp> {
        let mut acc = Vec::with_capacity(params.len());
        for (_, name, t) in params.iter() {
            let stored = self.get(&format!("{OPT_PREFIX}{name}"))?;
            if stored.data.len() != t.len() {
                return None;
            }
            acc.push(stored.data.iter().map(|&v| v as f64).collect());
        }
        Some(RmsProp::with_accumulators(decay, eps, acc))
    }

    pub fn to_tensor(&self, name: &str) -> Option<Tensor> {
        self.get(name).map(|t| Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| v as f64).collect() })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        w.write_all(self.meta.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u16).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&[t.shape.len() as u8])?;
            for &d in &t.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NumericsError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NumericsError::Checkpoint("bad magic".into()));
        }
        let meta_len = read_u32(r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta = String::from_utf8(meta).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
            let mut nd = [0u8; 1];
            r.read_exact(&mut nd)?;
            let shape: Vec<usize> = (0..nd[0]).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; 4 * n];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let mut f = io::BufReader::new(fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_shape_guard() {
        let mut p = ParamSet::new();
        let a = p.add("vlm/w", Tensor::new(vec![2, 3], vec![0.5, -1.25, 2.0, 0.0, 3.5, -0.125]).unwrap()).unwrap();
        p.add("agent/b", Tensor::scalar(0.75)).unwrap();
        let opt = RmsProp::new(0.99, 0.1, &p);
        let ck = Checkpoint::from_params("steps = 3\n".into(), &p, Some(&opt));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        // header: magic + meta len + meta + count
        assert_eq!(&buf[..8], b"MRCKPT01");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 10);
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);

        let mut q = p.clone();
        q.get_mut(a).data = vec![0.0; 6];
        back.load_into(&mut q).unwrap();
        assert_eq!(q, p);
        assert!(back.optimizer(&p, 0.99, 0.1).is_some());

        let mut wrong = ParamSet::new();
        wrong.add("vlm/w", Tensor::zeros(&[3, 2])).unwrap();
        assert!(back.load_into(&mut wrong).is_err());
        assert!(Checkpoint::read_from(&mut &b"NOTACKPT"[..]).is_err());
    }
}
