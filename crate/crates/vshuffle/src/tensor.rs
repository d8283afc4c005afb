//! Dense video tensors in (N, T, C, H, W) row-major layout, W fastest.
//!
//! All operations copy; inputs are never modified or aliased.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Labeled dimensions of a video tensor: batch, frames, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, t: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, t, c, h, w }
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.n * self.t * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one (C, H, W) frame.
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Elements in one (H, W) channel plane.
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("N", self.n),
            ("T", self.t),
            ("C", self.c),
            ("H", self.h),
            ("W", self.w),
        ] {
            if d == 0 {
                return Err(Error::InvalidDimension(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {})",
            self.n, self.t, self.c, self.h, self.w
        )
    }
}

/// Dense real-valued video tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor<S: Scalar> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> VideoTensor<S> {
    /// Allocates a zero-filled tensor. Errors on any zero dimension or
    /// on allocation failure.
    pub fn zeros(shape: Shape) -> Result<Self> {
        shape.validate()?;
        let len = shape.len();
        let mut data = Vec::new();
        data.try_reserve_exact(len)
            .map_err(|_| Error::OutOfMemory(len))?;
        data.resize(len, S::zero());
        Ok(VideoTensor { shape, data })
    }

    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::InvalidDimension(format!(
                "data length {} != shape product {}",
                data.len(),
                shape.len()
            )));
        }
        Ok(VideoTensor { shape, data })
    }

    pub fn filled(shape: Shape, value: S) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.iter_mut().for_each(|v| *v = value);
        Ok(t)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, t: usize, c: usize, h: usize, w: usize) -> usize {
        (((n * self.shape.t + t) * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, t: usize, c: usize, h: usize, w: usize) -> S {
        self.data[self.index(n, t, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, t: usize, c: usize, h: usize, w: usize) -> &mut S {
        let i = self.index(n, t, c, h, w);
        &mut self.data[i]
    }

    /// Copies channels `[lo, hi)` of a single frame into a new
    /// (N, 1, hi-lo, H, W) tensor.
    pub fn slice_channels(&self, frame: usize, lo: usize, hi: usize) -> Result<Self> {
        let s = self.shape;
        if frame >= s.t {
            return Err(Error::IndexOutOfRange(format!(
                "frame {frame} >= T {}",
                s.t
            )));
        }
        if lo >= hi || hi > s.c {
            return Err(Error::IndexOutOfRange(format!(
                "channel range [{lo}, {hi}) invalid for C {}",
                s.c
            )));
        }
        let out_shape = Shape::new(s.n, 1, hi - lo, s.h, s.w);
        let mut out = Self::zeros(out_shape)?;
        let plane = s.plane_len();
        let src_frame = s.frame_len();
        let dst_frame = out_shape.frame_len();
        for n in 0..s.n {
            let src = n * s.t * src_frame + frame * src_frame + lo * plane;
            let dst = n * dst_frame;
            out.data[dst..dst + dst_frame]
                .copy_from_slice(&self.data[src..src + (hi - lo) * plane]);
        }
        Ok(out)
    }

    /// Concatenates tensors along the channel axis; all parts must share
    /// N, T, H and W.
    pub fn concat_channels(parts: &[VideoTensor<S>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidDimension("concat of zero parts".into()))?;
        let s0 = first.shape;
        let mut c_total = 0;
        for p in parts {
            let s = p.shape;
            if s.n != s0.n || s.t != s0.t || s.h != s0.h || s.w != s0.w {
                return Err(Error::ShapeMismatch {
                    expected: s0,
                    got: s,
                });
            }
            c_total += s.c;
        }
        let out_shape = Shape::new(s0.n, s0.t, c_total, s0.h, s0.w);
        let mut out = Self::zeros(out_shape)?;
        let plane = s0.plane_len();
        for n in 0..s0.n {
            for t in 0..s0.t {
                let mut c_off = 0;
                for p in parts {
                    let pc = p.shape.c;
                    let src = (n * s0.t + t) * pc * plane;
                    let dst = (n * s0.t + t) * c_total * plane + c_off * plane;
                    out.data[dst..dst + pc * plane]
                        .copy_from_slice(&p.data[src..src + pc * plane]);
                    c_off += pc;
                }
            }
        }
        Ok(out)
    }

    /// Elementwise |a - b| <= tol. Errors on shape mismatch.
    pub fn approx_equal(&self, other: &Self, tol: f64) -> Result<bool> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                got: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .all(|(&a, &b)| (a - b).abs().to_f64().unwrap_or(f64::INFINITY) <= tol))
    }

    /// Euclidean norm, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64().unwrap();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Value multiset fingerprint: all elements sorted ascending.
    pub fn sorted_values(&self) -> Vec<S> {
        let mut v = self.data.clone();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        v
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
