//! Binary model and exemplar files.
//!
//! Model layout, all integers and floats little-endian:
//!
//! ```text
//! magic "PCGSIAM\0" | version u32 | hyper 5 x u64 (L, filters, kernel, pool, embed)
//! tensor count u32 | per tensor: rank u32, dims u64 x rank
//! tensor data as f64, in table order
//! ```
//!
//! Exemplar files hold `"PCGEXEM\0" | version u32 | count u64 | L u64`
//! followed by, per exemplar, the source id (u32 length + UTF-8), start and
//! end (u64) and `L` f64 values.

use std::path::Path;
use std::sync::Arc;

use super::{EventImage, EventSource, Hyper, SiameseError, SiameseModel};

const MODEL_MAGIC: &[u8; 8] = b"PCGSIAM\0";
const EXEMPLAR_MAGIC: &[u8; 8] = b"PCGEXEM\0";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> SiameseError {
    SiameseError::Format(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SiameseError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SiameseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, SiameseError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn size(&mut self) -> Result<usize, SiameseError> {
        usize::try_from(self.u64()?).map_err(|_| bad("size does not fit in memory"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, SiameseError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<(), SiameseError> {
        if self.take(8)? != magic {
            return Err(bad("wrong magic bytes"));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(bad(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), SiameseError> {
        if self.pos != self.buf.len() {
            return Err(bad(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn shapes(h: &Hyper) -> [Vec<usize>; 4] {
    [
        vec![h.n_filters, h.kernel_len],
        vec![h.n_filters],
        vec![h.embed_dim, h.flat_len()],
        vec![h.embed_dim],
    ]
}

pub fn encode_model(model: &SiameseModel) -> Vec<u8> {
    let h = &model.hyper;
    let mut out = Vec::with_capacity(64 + 8 * model.param_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [h.event_len, h.n_filters, h.kernel_len, h.pool_len, h.embed_dim] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let table = shapes(h);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for dims in &table {
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for t in model.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<SiameseModel, SiameseError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(MODEL_MAGIC)?;
    let mut hv = [0usize; 5];
    for v in hv.iter_mut() {
        *v = r.size()?;
    }
    let hyper = Hyper {
        event_len: hv[0],
        n_filters: hv[1],
        kernel_len: hv[2],
        pool_len: hv[3],
        embed_dim: hv[4],
    };
    hyper.validate()?;
    let expect = shapes(&hyper);
    let count = r.u32()? as usize;
    if count != expect.len() {
        return Err(bad(format!("expected {} tensors, table lists {count}", expect.len())));
    }
    for (i, want) in expect.iter().enumerate() {
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.size()).collect::<Result<Vec<_>, _>>()?;
        if &dims != want {
            return Err(bad(format!("tensor {i} has shape {dims:?}, hyperparameters imply {want:?}")));
        }
    }
    let mut data = expect.iter().map(|dims| r.f64s(dims.iter().product()));
    let model = SiameseModel {
        hyper,
        conv_kernels: data.next().expect("4 tensors")?,
        conv_bias: data.next().expect("4 tensors")?,
        dense_weights: data.next().expect("4 tensors")?,
        dense_bias: data.next().expect("4 tensors")?,
    };
    r.finish()?;
    model.validate()?;
    Ok(model)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SiameseError + '_ {
    move |source| SiameseError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_model(path: &Path, model: &SiameseModel) -> Result<(), SiameseError> {
    std::fs::write(path, encode_model(model)).map_err(io_err(path))
}

pub fn read_model(path: &Path) -> Result<SiameseModel, SiameseError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_model(&bytes)
}

pub fn encode_exemplars(events: &[Arc<EventImage>]) -> Result<Vec<u8>, SiameseError> {
    let len = events.first().map_or(0, |e| e.values.len());
    if events.iter().any(|e| e.values.len() != len) {
        return Err(bad("exemplars differ in length"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(EXEMPLAR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(events.len() as u64).to_le_bytes());
    out.extend_from_slice(&(len as u64).to_le_bytes());
    for e in events {
        let id = e.source.recording_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(e.source.start as u64).to_le_bytes());
        out.extend_from_slice(&(e.source.end as u64).to_le_bytes());
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_exemplars(bytes: &[u8]) -> Result<Vec<Arc<EventImage>>, SiameseError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(EXEMPLAR_MAGIC)?;
    let count = r.size()?;
    let len = r.size()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let id_len = r.u32()? as usize;
        let recording_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| bad("recording id is not UTF-8"))?
            .to_string();
        let start = r.size()?;
        let end = r.size()?;
        let values = r.f64s(len)?;
        out.push(Arc::new(EventImage {
            values,
            source: EventSource { recording_id, start, end },
        }));
    }
    r.finish()?;
    Ok(out)
}

pub fn write_exemplars(path: &Path, events: &[Arc<EventImage>]) -> Result<(), SiameseError> {
    std::fs::write(path, encode_exemplars(events)?).map_err(io_err(path))
}

pub fn read_exemplars(path: &Path) -> Result<Vec<Arc<EventImage>>, SiameseError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_exemplars(&bytes)
}
