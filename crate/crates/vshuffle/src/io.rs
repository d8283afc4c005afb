//! On-disk formats.
//!
//! VST1 tensor dump: ASCII magic `VST1\n`, one header line
//! `N T C H W dtype\n` (dtype in {f32, f64}), then raw little-endian
//! values in layout order.
//!
//! VSNCKPT1 checkpoint: ASCII magic `VSNCKPT1\n`, then for each parameter
//! a name line followed by a VST1 block.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, VideoTensor};

pub const VST1_MAGIC: &str = "VST1";
pub const CKPT_MAGIC: &str = "VSNCKPT1";

/// A tensor of either scalar width, as read back from disk.
pub enum AnyTensor {
    F32(VideoTensor<f32>),
    F64(VideoTensor<f64>),
}

pub fn write_vst1<S: Scalar, W: Write>(w: &mut W, t: &VideoTensor<S>) -> Result<()> {
    let s = t.shape();
    writeln!(w, "{VST1_MAGIC}")?;
    writeln!(w, "{} {} {} {} {} {}", s.n, s.t, s.c, s.h, s.w, S::DTYPE)?;
    let mut buf = Vec::with_capacity(t.data().len() * S::BYTES);
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    Ok(line.trim_end_matches('\n').to_string())
}

fn parse_header(line: &str) -> Result<(Shape, String)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 6 {
        return Err(Error::Parse(format!("bad VST1 header: {line:?}")));
    }
    let mut dims = [0usize; 5];
    for (d, p) in dims.iter_mut().zip(&parts[..5]) {
        *d = p
            .parse()
            .map_err(|_| Error::Parse(format!("bad dimension {p:?}")))?;
    }
    Ok((
        Shape::new(dims[0], dims[1], dims[2], dims[3], dims[4]),
        parts[5].to_string(),
    ))
}

fn read_payload<S: Scalar, R: BufRead>(r: &mut R, shape: Shape) -> Result<VideoTensor<S>> {
    let len = shape.len();
    let mut bytes = vec![0u8; len * S::BYTES];
    r.read_exact(&mut bytes)?;
    let data: Vec<S> = bytes.chunks_exact(S::BYTES).map(S::read_le).collect();
    VideoTensor::from_vec(shape, data)
}

pub fn read_vst1<R: BufRead>(r: &mut R) -> Result<AnyTensor> {
    let magic = read_line(r)?;
    if magic != VST1_MAGIC {
        return Err(Error::Parse(format!("bad magic {magic:?}")));
    }
    read_vst1_body(r)
}

/// Reads the header and payload after the magic line has been consumed.
fn read_vst1_body<R: BufRead>(r: &mut R) -> Result<AnyTensor> {
    let (shape, dtype) = parse_header(&read_line(r)?)?;
    match dtype.as_str() {
        "f32" => Ok(AnyTensor::F32(read_payload(r, shape)?)),
        "f64" => Ok(AnyTensor::F64(read_payload(r, shape)?)),
        other => Err(Error::Parse(format!("unknown dtype {other:?}"))),
    }
}

pub fn read_vst1_file(path: &Path) -> Result<AnyTensor> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_vst1(&mut r)
}

/// Writes a file atomically: temp file in the same directory, then rename.
/// A failed run never leaves a partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp.partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_vst1_file<S: Scalar>(path: &Path, t: &VideoTensor<S>) -> Result<()> {
    let mut buf = Vec::new();
    write_vst1(&mut buf, t)?;
    write_atomic(path, &buf)
}

/// Serializes named parameter tensors into a checkpoint byte buffer.
pub fn write_checkpoint<S: Scalar>(entries: &[(String, VideoTensor<S>)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    writeln!(buf, "{CKPT_MAGIC}")?;
    for (name, tensor) in entries {
        writeln!(buf, "{name}")?;
        write_vst1(&mut buf, tensor)?;
    }
    Ok(buf)
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Vec<(String, AnyTensor)>> {
    let magic = read_line(r)?;
    if magic != CKPT_MAGIC {
        return Err(Error::Parse(format!("bad checkpoint magic {magic:?}")));
    }
    let mut entries = Vec::new();
    loop {
        let mut name = String::new();
        if r.read_line(&mut name)? == 0 {
            break;
        }
        let name = name.trim_end_matches('\n').to_string();
        if name.is_empty() {
            break;
        }
        let magic = read_line(r)?;
        if magic != VST1_MAGIC {
            return Err(Error::Parse(format!(
                "bad tensor magic {magic:?} for entry {name:?}"
            )));
        }
        entries.push((name, read_vst1_body(r)?));
    }
    Ok(entries)
}

pub fn read_checkpoint_file(path: &Path) -> Result<Vec<(String, AnyTensor)>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VideoTensor<f32> {
        let shape = Shape::new(1, 2, 3, 2, 2);
        let data = (0..shape.len()).map(|i| i as f32 * 0.5 - 3.0).collect();
        VideoTensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn vst1_round_trip_f32() {
        let t = sample();
        let mut buf = Vec::new();
        write_vst1(&mut buf, &t).unwrap();
        assert!(buf.starts_with(b"VST1\n1 2 3 2 2 f32\n"));
        match read_vst1(&mut &buf[..]).unwrap() {
            AnyTensor::F32(back) => assert_eq!(back, t),
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn vst1_round_trip_f64() {
        let shape = Shape::new(2, 1, 1, 1, 3);
        let t =
            VideoTensor::<f64>::from_vec(shape, vec![1.5, -2.25, 0.0, 1e-12, 7.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_vst1(&mut buf, &t).unwrap();
        match read_vst1(&mut &buf[..]).unwrap() {
            AnyTensor::F64(back) => assert_eq!(back, t),
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn vst1_rejects_bad_magic() {
        let buf = b"NOPE\n1 1 1 1 1 f32\n".to_vec();
        assert!(read_vst1(&mut &buf[..]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = sample();
        let b = VideoTensor::<f32>::filled(Shape::new(1, 1, 4, 1, 1), 2.5).unwrap();
        let entries = vec![("conv1.weight".to_string(), a.clone()), ("bn1.gamma".to_string(), b.clone())];
        let bytes = write_checkpoint(&entries).unwrap();
        let back = read_checkpoint(&mut &bytes[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "conv1.weight");
        match &back[0].1 {
            AnyTensor::F32(t) => assert_eq!(t, &a),
            _ => panic!("wrong dtype"),
        }
        match &back[1].1 {
            AnyTensor::F32(t) => assert_eq!(t, &b),
            _ => panic!("wrong dtype"),
        }
    }
}
