//! Binary checkpoint format. All integers are little-endian.
//!
//! ```text
//! magic        8 bytes  "WT5TOY\0\0"
//! version      u32      1
//! d_model      u32
//! vocab_len    u32
//! vocab_len ×  { u32 byte length, UTF-8 token }     (in id order)
//! n_tensors    u32
//! n_tensors ×  { u32 byte length, UTF-8 name,
//!                u32 rank, rank × u32 dims,
//!                product(dims) × f64 values, row-major }
//! ```
//!
//! Tensors appear in [`Param::ALL`] order; loading checks names and shapes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Param, ParamSet, ToyModel};
use super::{Seq2SeqError, Vocabulary};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"WT5TOY\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value does not fit in u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())
}

pub fn write_checkpoint(model: &ToyModel, mut w: impl Write) -> Result<(), Seq2SeqError> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION as usize)?;
    put_u32(&mut w, model.d_model)?;
    put_u32(&mut w, model.vocab.len())?;
    for t in model.vocab.tokens() {
        put_str(&mut w, t)?;
    }
    put_u32(&mut w, model.params.tensors.len())?;
    for t in &model.params.tensors {
        put_str(&mut w, &t.name)?;
        put_u32(&mut w, t.shape.len())?;
        for &d in &t.shape {
            put_u32(&mut w, d)?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(model: &ToyModel, path: impl AsRef<Path>) -> Result<(), Seq2SeqError> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, Seq2SeqError> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Seq2SeqError::Checkpoint("truncated file".into()),
            _ => Seq2SeqError::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize, Seq2SeqError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64, Seq2SeqError> {
        let b = self.bytes(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, Seq2SeqError> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?).map_err(|_| Seq2SeqError::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<ToyModel, Seq2SeqError> {
    let mut r = Reader { inner: r };
    if r.bytes(8)? != CHECKPOINT_MAGIC {
        return Err(Seq2SeqError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Seq2SeqError::Checkpoint(format!("unsupported version {version}")));
    }
    let d = r.u32()?;
    let vocab_len = r.u32()?;
    let tokens = (0..vocab_len).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
    let vocab = Vocabulary::from_tokens(tokens)?;
    let n = r.u32()?;
    if n != Param::ALL.len() {
        return Err(Seq2SeqError::Checkpoint(format!(
            "expected {} tensors, found {n}",
            Param::ALL.len()
        )));
    }
    let mut params = ParamSet::zeros(vocab.len(), d);
    for (p, t) in Param::ALL.iter().zip(params.tensors.iter_mut()) {
        let name = r.string()?;
        if name != p.name() {
            return Err(Seq2SeqError::Checkpoint(format!(
                "expected tensor {}, found {name}",
                p.name()
            )));
        }
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        if shape != t.shape {
            return Err(Seq2SeqError::Checkpoint(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                t.shape
            )));
        }
        for v in &mut t.data {
            *v = r.f64()?;
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Seq2SeqError::Checkpoint("trailing bytes".into()));
    }
    Ok(ToyModel {
        vocab,
        d_model: d,
        params,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToyModel, Seq2SeqError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
