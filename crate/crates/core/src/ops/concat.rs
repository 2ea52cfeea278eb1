use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Concatenate along channels; `a` fills the leading channels.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::shape(format!(
            "cannot concatenate {sa} and {sb} along channels"
        )));
    }
    let plane = sa.plane();
    let (pa, pb) = (sa.c * plane, sb.c * plane);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * pa..(n + 1) * pa]);
        data.extend_from_slice(&b.data()[n * pb..(n + 1) * pb]);
    }
    Tensor::from_vec(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data)
}

/// Split a channel-concatenated gradient back into its `a` and `b` parts.
pub fn split_channels<T: Real>(grad: &Tensor<T>, c_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = grad.shape();
    if c_a > s.c {
        return Err(Error::shape(format!(
            "cannot split {c_a} leading channels from {s}"
        )));
    }
    let c_b = s.c - c_a;
    let plane = s.plane();
    let mut da = Vec::with_capacity(s.n * c_a * plane);
    let mut db = Vec::with_capacity(s.n * c_b * plane);
    for n in 0..s.n {
        let base = n * s.c * plane;
        da.extend_from_slice(&grad.data()[base..base + c_a * plane]);
        db.extend_from_slice(&grad.data()[base + c_a * plane..base + s.c * plane]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.n, c_a, s.h, s.w), da)?,
        Tensor::from_vec(Shape::new(s.n, c_b, s.h, s.w), db)?,
    ))
}
