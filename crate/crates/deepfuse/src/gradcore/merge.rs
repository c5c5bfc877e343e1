//! Elementwise feature blending for the fusion layer, plus channel
//! concatenation. Max gradients route to the winning side, ties to `a`.

use crate::error::{Error, Result};

use super::tensor::Tensor3;

/// How the two feature stacks are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    Add,
    Mean,
    Max,
    Product,
    /// Channel concatenation; handled by [`concat_forward`], not the
    /// elementwise paths.
    Concat,
}

impl MergeMode {
    pub fn parse(s: &str) -> Result<MergeMode> {
        match s.to_ascii_lowercase().as_str() {
            "add" | "addition" => Ok(MergeMode::Add),
            "mean" => Ok(MergeMode::Mean),
            "max" => Ok(MergeMode::Max),
            "product" => Ok(MergeMode::Product),
            "concat" | "concatenation" => Ok(MergeMode::Concat),
            other => Err(Error::config(format!("unknown merge mode {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MergeMode::Add => "add",
            MergeMode::Mean => "mean",
            MergeMode::Max => "max",
            MergeMode::Product => "product",
            MergeMode::Concat => "concat",
        }
    }
}

fn check_shapes(a: &Tensor3, b: &Tensor3) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::config(format!(
            "merge operands differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Elementwise merge of two equally shaped feature stacks.
pub fn merge_forward(a: &Tensor3, b: &Tensor3, mode: MergeMode) -> Result<Tensor3> {
    check_shapes(a, b)?;
    let (h, w, c) = a.shape();
    let mut out = Tensor3::zeros(h, w, c);
    let o = out.as_mut_slice();
    let (av, bv) = (a.as_slice(), b.as_slice());
    match mode {
        MergeMode::Add => {
            for i in 0..o.len() {
                o[i] = av[i] + bv[i];
            }
        }
        MergeMode::Mean => {
            for i in 0..o.len() {
                o[i] = (av[i] + bv[i]) * 0.5;
            }
        }
        MergeMode::Max => {
            for i in 0..o.len() {
                o[i] = if av[i] >= bv[i] { av[i] } else { bv[i] };
            }
        }
        MergeMode::Product => {
            for i in 0..o.len() {
                o[i] = av[i] * bv[i];
            }
        }
        MergeMode::Concat => {
            return Err(Error::config("concat is not an elementwise merge"));
        }
    }
    Ok(out)
}

/// Distributes the upstream gradient to both operands.
pub fn merge_backward(
    a: &Tensor3,
    b: &Tensor3,
    mode: MergeMode,
    upstream: &Tensor3,
) -> Result<(Tensor3, Tensor3)> {
    check_shapes(a, b)?;
    check_shapes(a, upstream)?;
    let (h, w, c) = a.shape();
    let mut ga = Tensor3::zeros(h, w, c);
    let mut gb = Tensor3::zeros(h, w, c);
    let (gas, gbs) = (ga.as_mut_slice(), gb.as_mut_slice());
    let (av, bv, g) = (a.as_slice(), b.as_slice(), upstream.as_slice());
    match mode {
        MergeMode::Add => {
            gas.copy_from_slice(g);
            gbs.copy_from_slice(g);
        }
        MergeMode::Mean => {
            for i in 0..g.len() {
                gas[i] = g[i] * 0.5;
                gbs[i] = g[i] * 0.5;
            }
        }
        MergeMode::Max => {
            for i in 0..g.len() {
                if av[i] >= bv[i] {
                    gas[i] = g[i];
                } else {
                    gbs[i] = g[i];
                }
            }
        }
        MergeMode::Product => {
            for i in 0..g.len() {
                gas[i] = g[i] * bv[i];
                gbs[i] = g[i] * av[i];
            }
        }
        MergeMode::Concat => {
            return Err(Error::config("concat is not an elementwise merge"));
        }
    }
    Ok((ga, gb))
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_forward(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::config("concat operands differ in spatial dims"));
    }
    let (h, w) = (a.height(), a.width());
    let (ca, cb) = (a.channels(), b.channels());
    let mut out = Tensor3::zeros(h, w, ca + cb);
    for y in 0..h {
        for x in 0..w {
            let dst = out.pixel_mut(y, x);
            dst[..ca].copy_from_slice(a.pixel(y, x));
            dst[ca..].copy_from_slice(b.pixel(y, x));
        }
    }
    Ok(out)
}

/// Splits the upstream gradient back into the two channel groups.
pub fn concat_backward(upstream: &Tensor3, ca: usize, cb: usize) -> Result<(Tensor3, Tensor3)> {
    if upstream.channels() != ca + cb {
        return Err(Error::config(format!(
            "concat upstream has {} channels, expected {}",
            upstream.channels(),
            ca + cb
        )));
    }
    let (h, w) = (upstream.height(), upstream.width());
    let mut ga = Tensor3::zeros(h, w, ca);
    let mut gb = Tensor3::zeros(h, w, cb);
    for y in 0..h {
        for x in 0..w {
            let src = upstream.pixel(y, x);
            ga.pixel_mut(y, x).copy_from_slice(&src[..ca]);
            gb.pixel_mut(y, x).copy_from_slice(&src[ca..]);
        }
    }
    Ok((ga, gb))
}
