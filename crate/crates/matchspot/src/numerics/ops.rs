use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Recorded operation: holds the parent tensors and enough metadata to run
/// the backward rule. A node's own output data is read off the node itself
/// during the backward pass where the rule needs it (sigmoid, exp, softmax).
pub(crate) enum Op<T: Real> {
    Matmul { a: Tensor<T>, b: Tensor<T> },
    Add { a: Tensor<T>, b: Tensor<T> },
    AddBias { a: Tensor<T>, b: Tensor<T> },
    Sub { a: Tensor<T>, b: Tensor<T> },
    Mul { a: Tensor<T>, b: Tensor<T> },
    Neg { a: Tensor<T> },
    AddScalar { a: Tensor<T> },
    MulScalar { a: Tensor<T>, c: T },
    Sigmoid { a: Tensor<T> },
    Tanh { a: Tensor<T> },
    Relu { a: Tensor<T> },
    Log { a: Tensor<T> },
    Exp { a: Tensor<T> },
    Clamp { a: Tensor<T>, lo: T, hi: T },
    Softmax { a: Tensor<T>, axis: usize },
    LogSoftmaxRows { a: Tensor<T> },
    LayerNorm { x: Tensor<T>, gain: Tensor<T>, bias: Tensor<T>, eps: T },
    DepthwiseConv1d { x: Tensor<T>, w: Tensor<T>, dilation: usize },
    Transpose { a: Tensor<T> },
    Reshape { a: Tensor<T> },
    Narrow { a: Tensor<T>, axis: usize, start: usize, len: usize },
    Concat { a: Tensor<T>, b: Tensor<T>, axis: usize },
    GatherRows { table: Tensor<T>, indices: Vec<usize> },
    DownsampleRows { a: Tensor<T>, factor: usize },
    SumAll { a: Tensor<T> },
    SumAxis0 { a: Tensor<T> },
}

impl<T: Real> Op<T> {
    pub(crate) fn into_parents(self) -> Vec<Tensor<T>> {
        match self {
            Op::Matmul { a, b }
            | Op::Add { a, b }
            | Op::AddBias { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Concat { a, b, .. } => vec![a, b],
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::DepthwiseConv1d { x, w, .. } => vec![x, w],
            Op::Neg { a }
            | Op::AddScalar { a }
            | Op::MulScalar { a, .. }
            | Op::Sigmoid { a }
            | Op::Tanh { a }
            | Op::Relu { a }
            | Op::Log { a }
            | Op::Exp { a }
            | Op::Clamp { a, .. }
            | Op::Softmax { a, .. }
            | Op::LogSoftmaxRows { a }
            | Op::Transpose { a }
            | Op::Reshape { a }
            | Op::Narrow { a, .. }
            | Op::DownsampleRows { a, .. }
            | Op::SumAll { a }
            | Op::SumAxis0 { a } => vec![a],
            Op::GatherRows { table, .. } => vec![table],
        }
    }

    pub(crate) fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Matmul { a, b }
            | Op::Add { a, b }
            | Op::AddBias { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Concat { a, b, .. } => vec![a, b],
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::DepthwiseConv1d { x, w, .. } => vec![x, w],
            Op::Neg { a }
            | Op::AddScalar { a }
            | Op::MulScalar { a, .. }
            | Op::Sigmoid { a }
            | Op::Tanh { a }
            | Op::Relu { a }
            | Op::Log { a }
            | Op::Exp { a }
            | Op::Clamp { a, .. }
            | Op::Softmax { a, .. }
            | Op::LogSoftmaxRows { a }
            | Op::Transpose { a }
            | Op::Reshape { a }
            | Op::Narrow { a, .. }
            | Op::DownsampleRows { a, .. }
            | Op::SumAll { a }
            | Op::SumAxis0 { a } => vec![a],
            Op::GatherRows { table, .. } => vec![table],
        }
    }

    /// Apply this node's backward rule. `node` is the op's output, `grad` the
    /// upstream gradient (same shape as the output); `sink` receives each
    /// parent's gradient contribution. Parents that do not require grad are
    /// skipped at the call sites via `sink`'s filter.
    pub(crate) fn backward_into(
        &self,
        node: &Tensor<T>,
        grad: &[T],
        sink: &mut dyn FnMut(&Tensor<T>, Vec<T>),
    ) {
        match self {
            Op::Matmul { a, b } => {
                let (m, k) = a.dims2();
                let (_, n) = b.dims2();
                if a.requires_grad() {
                    let bd = b.data_ref();
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = T::zero();
                            for j in 0..n {
                                s += grad[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    drop(bd);
                    sink(a, da);
                }
                if b.requires_grad() {
                    let ad = a.data_ref();
                    let mut db = vec![T::zero(); k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let av = ad[i * k + p];
                            if av != T::zero() {
                                for j in 0..n {
                                    db[p * n + j] += av * grad[i * n + j];
                                }
                            }
                        }
                    }
                    drop(ad);
                    sink(b, db);
                }
            }
            Op::Add { a, b } => {
                if a.requires_grad() {
                    sink(a, grad.to_vec());
                }
                if b.requires_grad() {
                    sink(b, grad.to_vec());
                }
            }
            Op::AddBias { a, b } => {
                if a.requires_grad() {
                    sink(a, grad.to_vec());
                }
                if b.requires_grad() {
                    let (r, c) = a.dims2();
                    let mut db = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += grad[i * c + j];
                        }
                    }
                    sink(b, db);
                }
            }
            Op::Sub { a, b } => {
                if a.requires_grad() {
                    sink(a, grad.to_vec());
                }
                if b.requires_grad() {
                    sink(b, grad.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul { a, b } => {
                if a.requires_grad() {
                    let bd = b.data_ref();
                    sink(a, grad.iter().zip(bd.iter()).map(|(&g, &v)| g * v).collect());
                }
                if b.requires_grad() {
                    let ad = a.data_ref();
                    sink(b, grad.iter().zip(ad.iter()).map(|(&g, &v)| g * v).collect());
                }
            }
            Op::Neg { a } => {
                if a.requires_grad() {
                    sink(a, grad.iter().map(|&g| -g).collect());
                }
            }
            Op::AddScalar { a } => {
                if a.requires_grad() {
                    sink(a, grad.to_vec());
                }
            }
            Op::MulScalar { a, c } => {
                if a.requires_grad() {
                    sink(a, grad.iter().map(|&g| g * *c).collect());
                }
            }
            Op::Sigmoid { a } => {
                if a.requires_grad() {
                    let y = node.data_ref();
                    sink(
                        a,
                        grad.iter()
                            .zip(y.iter())
                            .map(|(&g, &y)| g * y * (T::one() - y))
                            .collect(),
                    );
                }
            }
            Op::Tanh { a } => {
                if a.requires_grad() {
                    let y = node.data_ref();
                    sink(
                        a,
                        grad.iter()
                            .zip(y.iter())
                            .map(|(&g, &y)| g * (T::one() - y * y))
                            .collect(),
                    );
                }
            }
            Op::Relu { a } => {
                if a.requires_grad() {
                    let x = a.data_ref();
                    sink(
                        a,
                        grad.iter()
                            .zip(x.iter())
                            .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                            .collect(),
                    );
                }
            }
            Op::Log { a } => {
                if a.requires_grad() {
                    let x = a.data_ref();
                    sink(a, grad.iter().zip(x.iter()).map(|(&g, &x)| g / x).collect());
                }
            }
            Op::Exp { a } => {
                if a.requires_grad() {
                    let y = node.data_ref();
                    sink(a, grad.iter().zip(y.iter()).map(|(&g, &y)| g * y).collect());
                }
            }
            Op::Clamp { a, lo, hi } => {
                if a.requires_grad() {
                    let x = a.data_ref();
                    sink(
                        a,
                        grad.iter()
                            .zip(x.iter())
                            .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { T::zero() })
                            .collect(),
                    );
                }
            }
            Op::Softmax { a, axis } => {
                if a.requires_grad() {
                    let y = node.data_ref();
                    let (r, c) = node.dims2();
                    let mut da = vec![T::zero(); r * c];
                    if *axis == 1 || node.shape().len() == 1 {
                        for i in 0..r {
                            let row = i * c;
                            let mut s = T::zero();
                            for j in 0..c {
                                s += grad[row + j] * y[row + j];
                            }
                            for j in 0..c {
                                da[row + j] = y[row + j] * (grad[row + j] - s);
                            }
                        }
                    } else {
                        for j in 0..c {
                            let mut s = T::zero();
                            for i in 0..r {
                                s += grad[i * c + j] * y[i * c + j];
                            }
                            for i in 0..r {
                                da[i * c + j] = y[i * c + j] * (grad[i * c + j] - s);
                            }
                        }
                    }
                    drop(y);
                    sink(a, da);
                }
            }
            Op::LogSoftmaxRows { a } => {
                if a.requires_grad() {
                    let y = node.data_ref();
                    let (r, c) = node.dims2();
                    let mut da = vec![T::zero(); r * c];
                    for i in 0..r {
                        let row = i * c;
                        let mut s = T::zero();
                        for j in 0..c {
                            s += grad[row + j];
                        }
                        for j in 0..c {
                            da[row + j] = grad[row + j] - y[row + j].exp() * s;
                        }
                    }
                    drop(y);
                    sink(a, da);
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (r, c) = x.dims2();
                let xd = x.data_ref();
                let gd = gain.data_ref();
                let cf = T::from_f64(c as f64);
                let mut dx = vec![T::zero(); r * c];
                let mut dgain = vec![T::zero(); c];
                let mut dbias = vec![T::zero(); c];
                for i in 0..r {
                    let row = i * c;
                    let mut mean = T::zero();
                    for j in 0..c {
                        mean += xd[row + j];
                    }
                    mean /= cf;
                    let mut var = T::zero();
                    for j in 0..c {
                        let d = xd[row + j] - mean;
                        var += d * d;
                    }
                    var /= cf;
                    let sigma = (var + *eps).sqrt();
                    // u = g ⊙ gain; dx = (u − mean(u) − x̂·mean(u⊙x̂)) / σ
                    let mut mean_u = T::zero();
                    let mut mean_ux = T::zero();
                    for j in 0..c {
                        let xhat = (xd[row + j] - mean) / sigma;
                        let u = grad[row + j] * gd[j];
                        mean_u += u;
                        mean_ux += u * xhat;
                        dgain[j] += grad[row + j] * xhat;
                        dbias[j] += grad[row + j];
                    }
                    mean_u /= cf;
                    mean_ux /= cf;
                    for j in 0..c {
                        let xhat = (xd[row + j] - mean) / sigma;
                        let u = grad[row + j] * gd[j];
                        dx[row + j] = (u - mean_u - xhat * mean_ux) / sigma;
                    }
                }
                drop(xd);
                drop(gd);
                if x.requires_grad() {
                    sink(x, dx);
                }
                if gain.requires_grad() {
                    sink(gain, dgain);
                }
                if bias.requires_grad() {
                    sink(bias, dbias);
                }
            }
            Op::DepthwiseConv1d { x, w, dilation } => {
                let (ch, b) = x.dims2();
                let (_, k) = w.dims2();
                let pad_l = ((k - 1) * dilation) / 2;
                if x.requires_grad() {
                    let wd = w.data_ref();
                    let mut dx = vec![T::zero(); ch * b];
                    for ci in 0..ch {
                        for t in 0..b {
                            let g = grad[ci * b + t];
                            if g == T::zero() {
                                continue;
                            }
                            for kk in 0..k {
                                let src = t as isize + (kk * dilation) as isize - pad_l as isize;
                                if src >= 0 && (src as usize) < b {
                                    dx[ci * b + src as usize] += g * wd[ci * k + kk];
                                }
                            }
                        }
                    }
                    drop(wd);
                    sink(x, dx);
                }
                if w.requires_grad() {
                    let xd = x.data_ref();
                    let mut dw = vec![T::zero(); ch * k];
                    for ci in 0..ch {
                        for kk in 0..k {
                            let mut s = T::zero();
                            for t in 0..b {
                                let src = t as isize + (kk * dilation) as isize - pad_l as isize;
                                if src >= 0 && (src as usize) < b {
                                    s += grad[ci * b + t] * xd[ci * b + src as usize];
                                }
                            }
                            dw[ci * k + kk] = s;
                        }
                    }
                    drop(xd);
                    sink(w, dw);
                }
            }
            Op::Transpose { a } => {
                if a.requires_grad() {
                    let (r, c) = a.dims2();
                    // grad has shape (c, r); transpose it back
                    let mut da = vec![T::zero(); r * c];
                    for i in 0..c {
                        for j in 0..r {
                            da[j * c + i] = grad[i * r + j];
                        }
                    }
                    sink(a, da);
                }
            }
            Op::Reshape { a } => {
                if a.requires_grad() {
                    sink(a, grad.to_vec());
                }
            }
            Op::Narrow { a, axis, start, len } => {
                if a.requires_grad() {
                    let mut da = vec![T::zero(); a.numel()];
                    if a.shape().len() == 1 {
                        da[*start..*start + *len].copy_from_slice(grad);
                    } else {
                        let (r, c) = a.dims2();
                        match axis {
                            0 => da[start * c..(start + len) * c].copy_from_slice(grad),
                            _ => {
                                for i in 0..r {
                                    for j in 0..*len {
                                        da[i * c + start + j] = grad[i * len + j];
                                    }
                                }
                            }
                        }
                    }
                    sink(a, da);
                }
            }
            Op::Concat { a, b, axis } => {
                let split = |t: &Tensor<T>, first: bool| -> Vec<T> {
                    if t.shape().len() == 1 || *axis == 0 {
                        let na = a.numel();
                        if first {
                            grad[..na].to_vec()
                        } else {
                            grad[na..].to_vec()
                        }
                    } else {
                        let (r, ca) = a.dims2();
                        let (_, cb) = b.dims2();
                        let cc = ca + cb;
                        let (c_here, off) = if first { (ca, 0) } else { (cb, ca) };
                        let mut out = vec![T::zero(); r * c_here];
                        for i in 0..r {
                            for j in 0..c_here {
                                out[i * c_here + j] = grad[i * cc + off + j];
                            }
                        }
                        out
                    }
                };
                if a.requires_grad() {
                    sink(a, split(a, true));
                }
                if b.requires_grad() {
                    sink(b, split(b, false));
                }
            }
            Op::GatherRows { table, indices } => {
                if table.requires_grad() {
                    let (_, e) = table.dims2();
                    let mut dt = vec![T::zero(); table.numel()];
                    for (r, &idx) in indices.iter().enumerate() {
                        for j in 0..e {
                            dt[idx * e + j] += grad[r * e + j];
                        }
                    }
                    sink(table, dt);
                }
            }
            Op::DownsampleRows { a, factor } => {
                if a.requires_grad() {
                    let (r, c) = a.dims2();
                    let out_rows = r.div_ceil(*factor);
                    let mut da = vec![T::zero(); r * c];
                    for i in 0..out_rows {
                        let src = i * factor;
                        da[src * c..src * c + c].copy_from_slice(&grad[i * c..i * c + c]);
                    }
                    sink(a, da);
                }
            }
            Op::SumAll { a } => {
                if a.requires_grad() {
                    sink(a, vec![grad[0]; a.numel()]);
                }
            }
            Op::SumAxis0 { a } => {
                if a.requires_grad() {
                    let (r, c) = a.dims2();
                    let mut da = vec![T::zero(); r * c];
                    for i in 0..r {
                        da[i * c..i * c + c].copy_from_slice(&grad[..c]);
                    }
                    sink(a, da);
                }
            }
        }
    }
}

fn record<T: Real>(parents: &[&Tensor<T>]) -> bool {
    parents.iter().any(|p| p.requires_grad())
}

impl<T: Real> Tensor<T> {
    /// Standard matrix product. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || other.shape().len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("need 2-d operands, got {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims disagree: {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let ad = self.data_ref();
        let bd = other.data_ref();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                if av != T::zero() {
                    let brow = p * n;
                    let orow = i * n;
                    for j in 0..n {
                        out[orow + j] += av * bd[brow + j];
                    }
                }
            }
        }
        drop(ad);
        drop(bd);
        let rg = record(&[self, other]);
        Ok(Tensor::build(
            vec![m, n],
            out,
            rg,
            rg.then(|| Op::Matmul { a: self.clone(), b: other.clone() }),
        ))
    }

    /// Elementwise addition. Broadcasting is restricted to the bias style:
    /// a 2-d left operand plus a 1-d right operand of trailing length.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() == other.shape() {
            let out = {
                let a = self.data_ref();
                let b = other.data_ref();
                a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
            };
            let rg = record(&[self, other]);
            return Ok(Tensor::build(
                self.shape().to_vec(),
                out,
                rg,
                rg.then(|| Op::Add { a: self.clone(), b: other.clone() }),
            ));
        }
        if self.shape().len() == 2 && other.shape().len() == 1 && self.shape()[1] == other.shape()[0]
        {
            let (r, c) = self.dims2();
            let out = {
                let a = self.data_ref();
                let b = other.data_ref();
                let mut out = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] = a[i * c + j] + b[j];
                    }
                }
                out
            };
            let rg = record(&[self, other]);
            return Ok(Tensor::build(
                vec![r, c],
                out,
                rg,
                rg.then(|| Op::AddBias { a: self.clone(), b: other.clone() }),
            ));
        }
        Err(Error::shape(
            "add",
            format!("incompatible shapes {:?} + {:?}", self.shape(), other.shape()),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "sub",
                format!("incompatible shapes {:?} - {:?}", self.shape(), other.shape()),
            ));
        }
        let out = {
            let a = self.data_ref();
            let b = other.data_ref();
            a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
        };
        let rg = record(&[self, other]);
        Ok(Tensor::build(
            self.shape().to_vec(),
            out,
            rg,
            rg.then(|| Op::Sub { a: self.clone(), b: other.clone() }),
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "mul",
                format!("incompatible shapes {:?} * {:?}", self.shape(), other.shape()),
            ));
        }
        let out = {
            let a = self.data_ref();
            let b = other.data_ref();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        let rg = record(&[self, other]);
        Ok(Tensor::build(
            self.shape().to_vec(),
            out,
            rg,
            rg.then(|| Op::Mul { a: self.clone(), b: other.clone() }),
        ))
    }

    pub fn neg(&self) -> Tensor<T> {
        let out = self.data_ref().iter().map(|&x| -x).collect();
        let rg = self.requires_grad();
        Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::Neg { a: self.clone() }))
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let out = self.data_ref().iter().map(|&x| x + c).collect();
        let rg = self.requires_grad();
        Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::AddScalar { a: self.clone() }))
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        let out = self.data_ref().iter().map(|&x| x * c).collect();
        let rg = self.requires_grad();
        Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::MulScalar { a: self.clone(), c }))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let one = T::one();
        let out = self
            .data_ref()
            .iter()
            .map(|&x| {
                // split on sign so exp never overflows
                if x >= T::zero() {
                    one / (one + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (one + e)
                }
            })
            .collect();
        let rg = self.requires_grad();
        Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::Sigmoid { a: self.clone() }))
    }

    pub fn tanh(&self) -> Tensor<T> {
        let out = self.data_ref().iter().map(|&x| x.tanh()).collect();
        let rg = self.requires_grad();
        Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::Tanh { a: self.clone() }))
    }

    pub fn relu(&self) -> Tensor<T> {
        let out = self
            .data_ref()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let rg = self.requires_grad();
        Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::Relu { a: self.clone() }))
    }

    /// Natural log. Errors if any element is outside the domain (x <= 0).
    pub fn log(&self) -> Result<Tensor<T>> {
        {
            let d = self.data_ref();
            if let Some(bad) = d.iter().find(|v| **v <= T::zero()) {
                return Err(Error::numeric("log", format!("domain violation: log({bad})")));
            }
        }
        let out = self.data_ref().iter().map(|&x| x.ln()).collect();
        let rg = self.requires_grad();
        Ok(Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::Log { a: self.clone() })))
    }

    /// Exponential. Errors on overflow to infinity.
    pub fn exp(&self) -> Result<Tensor<T>> {
        let out: Vec<T> = self.data_ref().iter().map(|&x| x.exp()).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("exp", "overflow to non-finite value".to_string()));
        }
        let rg = self.requires_grad();
        Ok(Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::Exp { a: self.clone() })))
    }

    /// Clamp into [lo, hi]; gradient passes through inside the interval.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        let out = self
            .data_ref()
            .iter()
            .map(|&x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            })
            .collect();
        let rg = self.requires_grad();
        Tensor::build(self.shape().to_vec(), out, rg, rg.then(|| Op::Clamp { a: self.clone(), lo, hi }))
    }

    /// Max-stabilized softmax along `axis` of a 2-d tensor (1-d tensors use
    /// axis 0 and behave as one row). Rows/columns sum to one.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        if rank > 2 {
            return Err(Error::shape("softmax", format!("need 1-d/2-d, got {:?}", self.shape())));
        }
        if (rank == 1 && axis != 0) || (rank == 2 && axis > 1) {
            return Err(Error::shape("softmax", format!("axis {axis} invalid for {:?}", self.shape())));
        }
        let (r, c) = self.dims2();
        let d = self.data_ref();
        let mut out = vec![T::zero(); r * c];
        let row_mode = rank == 1 || axis == 1;
        if row_mode {
            for i in 0..r {
                let row = i * c;
                let mut m = d[row];
                for j in 1..c {
                    if d[row + j] > m {
                        m = d[row + j];
                    }
                }
                let mut s = T::zero();
                for j in 0..c {
                    let e = (d[row + j] - m).exp();
                    out[row + j] = e;
                    s += e;
                }
                for j in 0..c {
                    out[row + j] /= s;
                }
            }
        } else {
            for j in 0..c {
                let mut m = d[j];
                for i in 1..r {
                    if d[i * c + j] > m {
                        m = d[i * c + j];
                    }
                }
                let mut s = T::zero();
                for i in 0..r {
                    let e = (d[i * c + j] - m).exp();
                    out[i * c + j] = e;
                    s += e;
                }
                for i in 0..r {
                    out[i * c + j] /= s;
                }
            }
        }
        drop(d);
        let rg = self.requires_grad();
        let ax = if row_mode { 1 } else { 0 };
        Ok(Tensor::build(
            self.shape().to_vec(),
            out,
            rg,
            rg.then(|| Op::Softmax { a: self.clone(), axis: ax }),
        ))
    }

    /// Row-wise log-softmax (x − logsumexp per row), max-stabilized.
    pub fn log_softmax_rows(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::shape("log_softmax", format!("need 2-d, got {:?}", self.shape())));
        }
        let (r, c) = self.dims2();
        let d = self.data_ref();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = i * c;
            let mut m = d[row];
            for j in 1..c {
                if d[row + j] > m {
                    m = d[row + j];
                }
            }
            let mut s = T::zero();
            for j in 0..c {
                s += (d[row + j] - m).exp();
            }
            let lse = m + s.ln();
            for j in 0..c {
                out[row + j] = d[row + j] - lse;
            }
        }
        drop(d);
        let rg = self.requires_grad();
        Ok(Tensor::build(
            self.shape().to_vec(),
            out,
            rg,
            rg.then(|| Op::LogSoftmaxRows { a: self.clone() }),
        ))
    }

    /// Per-row layer normalization with affine gain/bias (both 1-d of the row
    /// width). Normalizes to zero mean, unit variance before the affine.
    pub fn layernorm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::shape("layernorm", format!("need 2-d input, got {:?}", self.shape())));
        }
        let (r, c) = self.dims2();
        if gain.shape() != [c] || bias.shape() != [c] {
            return Err(Error::shape(
                "layernorm",
                format!("gain/bias must be [{c}], got {:?}/{:?}", gain.shape(), bias.shape()),
            ));
        }
        let d = self.data_ref();
        let gd = gain.data_ref();
        let bd = bias.data_ref();
        let cf = T::from_f64(c as f64);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = i * c;
            let mut mean = T::zero();
            for j in 0..c {
                mean += d[row + j];
            }
            mean /= cf;
            let mut var = T::zero();
            for j in 0..c {
                let dv = d[row + j] - mean;
                var += dv * dv;
            }
            var /= cf;
            let sigma = (var + eps).sqrt();
            for j in 0..c {
                out[row + j] = (d[row + j] - mean) / sigma * gd[j] + bd[j];
            }
        }
        drop(d);
        drop(gd);
        drop(bd);
        let rg = record(&[self, gain, bias]);
        Ok(Tensor::build(
            vec![r, c],
            out,
            rg,
            rg.then(|| Op::LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                eps,
            }),
        ))
    }

    /// Depthwise 1-d convolution. `self` is laid out channels x time (C x B),
    /// `w` is C x K; each channel is convolved with its own kernel. Stride is
    /// fixed at 1; same-length output via zero padding of total (K-1)*dilation
    /// split floor/ceil between left and right.
    pub fn depthwise_conv1d(&self, w: &Tensor<T>, dilation: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || w.shape().len() != 2 {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("need 2-d x and w, got {:?}/{:?}", self.shape(), w.shape()),
            ));
        }
        if dilation == 0 {
            return Err(Error::shape("depthwise_conv1d", "dilation must be >= 1"));
        }
        let (ch, b) = self.dims2();
        let (cw, k) = w.dims2();
        if ch != cw {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("channel counts disagree: x has {ch}, w has {cw}"),
            ));
        }
        let pad_l = ((k - 1) * dilation) / 2;
        let xd = self.data_ref();
        let wd = w.data_ref();
        let mut out = vec![T::zero(); ch * b];
        for ci in 0..ch {
            for t in 0..b {
                let mut s = T::zero();
                for kk in 0..k {
                    let src = t as isize + (kk * dilation) as isize - pad_l as isize;
                    if src >= 0 && (src as usize) < b {
                        s += xd[ci * b + src as usize] * wd[ci * k + kk];
                    }
                }
                out[ci * b + t] = s;
            }
        }
        drop(xd);
        drop(wd);
        let rg = record(&[self, w]);
        Ok(Tensor::build(
            vec![ch, b],
            out,
            rg,
            rg.then(|| Op::DepthwiseConv1d { x: self.clone(), w: w.clone(), dilation }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::shape("transpose", format!("need 2-d, got {:?}", self.shape())));
        }
        let (r, c) = self.dims2();
        let d = self.data_ref();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        drop(d);
        let rg = self.requires_grad();
        Ok(Tensor::build(vec![c, r], out, rg, rg.then(|| Op::Transpose { a: self.clone() })))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} into {:?}", self.shape(), shape),
            ));
        }
        let rg = self.requires_grad();
        Ok(Tensor::build(shape, self.to_vec(), rg, rg.then(|| Op::Reshape { a: self.clone() })))
    }

    /// Contiguous slice along an axis. 1-d tensors slice elements (axis 0);
    /// 2-d tensors slice rows (axis 0) or columns (axis 1).
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        if len == 0 {
            return Err(Error::shape("narrow", "empty slice"));
        }
        let (out_shape, out): (Vec<usize>, Vec<T>) = if rank == 1 {
            if axis != 0 || start + len > self.shape()[0] {
                return Err(Error::shape(
                    "narrow",
                    format!("slice {start}..{} out of {:?} axis {axis}", start + len, self.shape()),
                ));
            }
            (vec![len], self.data_ref()[start..start + len].to_vec())
        } else if rank == 2 {
            let (r, c) = self.dims2();
            match axis {
                0 => {
                    if start + len > r {
                        return Err(Error::shape("narrow", format!("rows {start}..{} of {r}", start + len)));
                    }
                    (vec![len, c], self.data_ref()[start * c..(start + len) * c].to_vec())
                }
                1 => {
                    if start + len > c {
                        return Err(Error::shape("narrow", format!("cols {start}..{} of {c}", start + len)));
                    }
                    let d = self.data_ref();
                    let mut out = vec![T::zero(); r * len];
                    for i in 0..r {
                        out[i * len..(i + 1) * len].copy_from_slice(&d[i * c + start..i * c + start + len]);
                    }
                    (vec![r, len], out)
                }
                _ => return Err(Error::shape("narrow", format!("axis {axis} for 2-d"))),
            }
        } else {
            return Err(Error::shape("narrow", format!("rank {rank} unsupported")));
        };
        let rg = self.requires_grad();
        Ok(Tensor::build(
            out_shape,
            out,
            rg,
            rg.then(|| Op::Narrow { a: self.clone(), axis, start, len }),
        ))
    }

    /// Concatenate along an axis (both operands same rank; other axis equal).
    pub fn concat(&self, other: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        if rank != other.shape().len() {
            return Err(Error::shape("concat", "rank mismatch"));
        }
        if rank == 1 {
            if axis != 0 {
                return Err(Error::shape("concat", "1-d tensors concat on axis 0"));
            }
            let mut out = self.to_vec();
            out.extend(other.to_vec());
            let n = out.len();
            let rg = record(&[self, other]);
            return Ok(Tensor::build(
                vec![n],
                out,
                rg,
                rg.then(|| Op::Concat { a: self.clone(), b: other.clone(), axis: 0 }),
            ));
        }
        let (ra, ca) = self.dims2();
        let (rb, cb) = other.dims2();
        match axis {
            0 => {
                if ca != cb {
                    return Err(Error::shape("concat", format!("col counts {ca} vs {cb}")));
                }
                let mut out = self.to_vec();
                out.extend(other.to_vec());
                let rg = record(&[self, other]);
                Ok(Tensor::build(
                    vec![ra + rb, ca],
                    out,
                    rg,
                    rg.then(|| Op::Concat { a: self.clone(), b: other.clone(), axis: 0 }),
                ))
            }
            1 => {
                if ra != rb {
                    return Err(Error::shape("concat", format!("row counts {ra} vs {rb}")));
                }
                let ad = self.data_ref();
                let bd = other.data_ref();
                let cc = ca + cb;
                let mut out = vec![T::zero(); ra * cc];
                for i in 0..ra {
                    out[i * cc..i * cc + ca].copy_from_slice(&ad[i * ca..(i + 1) * ca]);
                    out[i * cc + ca..(i + 1) * cc].copy_from_slice(&bd[i * cb..(i + 1) * cb]);
                }
                drop(ad);
                drop(bd);
                let rg = record(&[self, other]);
                Ok(Tensor::build(
                    vec![ra, cc],
                    out,
                    rg,
                    rg.then(|| Op::Concat { a: self.clone(), b: other.clone(), axis: 1 }),
                ))
            }
            _ => Err(Error::shape("concat", format!("axis {axis} for 2-d"))),
        }
    }

    /// Row lookup by index list (embedding gather). Backward scatter-adds.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::shape("gather_rows", format!("need 2-d table, got {:?}", self.shape())));
        }
        let (v, e) = self.dims2();
        if indices.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::shape("gather_rows", format!("index {bad} out of {v} rows")));
        }
        let d = self.data_ref();
        let mut out = vec![T::zero(); indices.len() * e];
        for (r, &idx) in indices.iter().enumerate() {
            out[r * e..(r + 1) * e].copy_from_slice(&d[idx * e..(idx + 1) * e]);
        }
        drop(d);
        let rg = self.requires_grad();
        Ok(Tensor::build(
            vec![indices.len(), e],
            out,
            rg,
            rg.then(|| Op::GatherRows { table: self.clone(), indices: indices.to_vec() }),
        ))
    }

    /// Keep rows 0, f, 2f, ... — the decimation step of strided convolution.
    pub fn downsample_rows(&self, factor: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || factor == 0 {
            return Err(Error::shape("downsample_rows", format!("need 2-d and factor >= 1, got {:?}", self.shape())));
        }
        let (r, c) = self.dims2();
        let out_rows = r.div_ceil(factor);
        let d = self.data_ref();
        let mut out = vec![T::zero(); out_rows * c];
        for i in 0..out_rows {
            let src = i * factor;
            out[i * c..(i + 1) * c].copy_from_slice(&d[src * c..(src + 1) * c]);
        }
        drop(d);
        let rg = self.requires_grad();
        Ok(Tensor::build(
            vec![out_rows, c],
            out,
            rg,
            rg.then(|| Op::DownsampleRows { a: self.clone(), factor }),
        ))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data_ref().iter().copied().sum();
        let rg = self.requires_grad();
        Tensor::build(vec![1], vec![s], rg, rg.then(|| Op::SumAll { a: self.clone() }))
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().mul_scalar(T::from_f64(1.0 / n as f64))
    }

    /// Column sums of a 2-d tensor, kept 2-d as [1, C].
    pub fn sum_axis0(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::shape("sum_axis0", format!("need 2-d, got {:?}", self.shape())));
        }
        let (r, c) = self.dims2();
        let d = self.data_ref();
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] += d[i * c + j];
            }
        }
        drop(d);
        let rg = self.requires_grad();
        Ok(Tensor::build(vec![1, c], out, rg, rg.then(|| Op::SumAxis0 { a: self.clone() })))
    }

    /// Elementwise max of two same-shape tensors, detached from the tape.
    /// Used as the stabilizer constant in log-sum-exp compositions.
    pub fn max_detached(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape("max_detached", "shape mismatch"));
        }
        let a = self.data_ref();
        let b = other.data_ref();
        let out = a.iter().zip(b.iter()).map(|(&x, &y)| x.max(y)).collect();
        drop(a);
        drop(b);
        Tensor::constant(self.shape().to_vec(), out)
    }
}
