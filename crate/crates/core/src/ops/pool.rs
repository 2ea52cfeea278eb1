use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Flat input index of the winning element for each pooled output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxMap {
    pub input_shape: Shape,
    pub indices: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Ties go to the first element in
/// row-major window order.
pub fn maxpool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, ArgmaxMap)> {
    let is = input.shape();
    if !is.h.is_multiple_of(2) || !is.w.is_multiple_of(2) {
        return Err(Error::shape(format!(
            "2x2 max pooling needs even height and width, got {is}"
        )));
    }
    let os = Shape::new(is.n, is.c, is.h / 2, is.w / 2);
    let mut out = Vec::with_capacity(os.len());
    let mut indices = Vec::with_capacity(os.len());
    let x = input.data();
    for n in 0..is.n {
        for c in 0..is.c {
            for oh in 0..os.h {
                for ow in 0..os.w {
                    let base = input.offset(n, c, 2 * oh, 2 * ow);
                    let window = [base, base + 1, base + is.w, base + is.w + 1];
                    let mut best = window[0];
                    for &i in &window[1..] {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    indices.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(os, out)?,
        ArgmaxMap {
            input_shape: is,
            indices,
        },
    ))
}

/// Routes each upstream gradient to the input position that won the max.
pub fn maxpool2_backward<T: Real>(argmax: &ArgmaxMap, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.indices.len() {
        return Err(Error::shape(format!(
            "upstream gradient {} does not match pooled output of {}",
            grad_out.shape(),
            argmax.input_shape
        )));
    }
    let mut gi = Tensor::zeros(argmax.input_shape);
    let gid = gi.data_mut();
    for (&i, &g) in argmax.indices.iter().zip(grad_out.data()) {
        gid[i] = gid[i] + g;
    }
    Ok(gi)
}
