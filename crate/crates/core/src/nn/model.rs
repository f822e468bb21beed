//! Parameter registry, forward pass and backpropagation.

use std::hash::Hasher;

use fnv::FnvHasher;

use super::{Architecture, Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::DetRng;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<F> {
    pub name: String,
    pub tensor: Tensor<F>,
}

/// Weights of one model plus the global class id of every output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<F = f32> {
    arch: Architecture,
    output_classes: Vec<u32>,
    tensors: Vec<NamedTensor<F>>,
}

/// He-style initialization: weights `N(0, 2 / fan_in)`, biases zero.
pub fn init_params<F: Real>(
    arch: &Architecture,
    output_classes: &[u32],
    rng: &mut DetRng,
) -> Result<ModelParameters<F>> {
    if output_classes.is_empty() {
        return Err(Error::InvalidArgument("model head needs at least one class".into()));
    }
    arch.validate()?;
    let tensors = arch
        .param_specs(output_classes.len())
        .into_iter()
        .map(|spec| {
            let mut t = Tensor::zeros(spec.dims);
            if !spec.is_bias {
                let std = (2.0 / spec.fan_in as f64).sqrt();
                for v in t.data_mut() {
                    *v = F::of(rng.normal() * std);
                }
            }
            NamedTensor {
                name: spec.name,
                tensor: t,
            }
        })
        .collect();
    Ok(ModelParameters {
        arch: arch.clone(),
        output_classes: output_classes.to_vec(),
        tensors,
    })
}

impl<F: Real> ModelParameters<F> {
    /// Assemble from explicit tensors; names and shapes must match the
    /// architecture exactly.
    pub fn from_tensors(arch: Architecture, output_classes: Vec<u32>, tensors: Vec<NamedTensor<F>>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.param_specs(output_classes.len());
        if specs.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.name != t.name || s.dims != t.tensor.dims() {
                return Err(Error::InvalidArgument(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    t.name,
                    t.tensor.dims(),
                    s.name,
                    s.dims
                )));
            }
        }
        Ok(Self {
            arch,
            output_classes,
            tensors,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn output_classes(&self) -> &[u32] {
        &self.output_classes
    }

    pub fn local_index(&self, class: u32) -> Option<usize> {
        self.output_classes.iter().position(|&c| c == class)
    }

    pub fn tensors(&self) -> &[NamedTensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor<F>] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ModelParameters<G> {
        ModelParameters {
            arch: self.arch.clone(),
            output_classes: self.output_classes.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    tensor: t.tensor.cast(),
                })
                .collect(),
        }
    }

    /// Output-unit positions of `keep` (classes not in the head are skipped),
    /// in head order.
    pub fn head_rows(&self, keep: &[u32]) -> Vec<usize> {
        self.output_classes
            .iter()
            .enumerate()
            .filter(|(_, c)| keep.contains(c))
            .map(|(i, _)| i)
            .collect()
    }

    /// Rebuild the output layer with only the given rows. The weights of the
    /// dropped classes are deleted, not masked.
    pub fn select_head_rows(&mut self, rows: &[usize]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("model head needs at least one class".into()));
        }
        let n = self.tensors.len();
        for t in &mut self.tensors[n - 2..] {
            t.tensor = t.tensor.select_rows(rows);
        }
        self.output_classes = rows.iter().map(|&r| self.output_classes[r]).collect();
        Ok(())
    }

    /// FNV-1a digest over names, shapes and `f32` payloads.
    pub fn digest(&self) -> u64 {
        let mut h = FnvHasher::default();
        for c in &self.output_classes {
            h.write(&c.to_le_bytes());
        }
        for t in &self.tensors {
            h.write(t.name.as_bytes());
            for &d in t.tensor.dims() {
                h.write(&(d as u32).to_le_bytes());
            }
            for v in t.tensor.data() {
                h.write(&v.as_f32().to_le_bytes());
            }
        }
        h.finish()
    }

    fn check_batch(&self, batch: &Tensor<F>) -> Result<usize> {
        let dims = batch.dims();
        let n = dims.first().copied().unwrap_or(0);
        let per: usize = dims.iter().skip(1).product();
        if dims.len() < 2 || per != self.arch.input_len() {
            return Err(Error::InvalidArgument(format!(
                "batch dims {dims:?} do not match model input of {} values",
                self.arch.input_len()
            )));
        }
        Ok(n)
    }

    /// Raw output scores, `(batch, classes)`.
    pub fn logits(&self, batch: &Tensor<F>) -> Result<Tensor<F>> {
        let n = self.check_batch(batch)?;
        let acts = forward_pass(self, batch.data(), n, false);
        let out = acts.values.into_iter().last().expect("at least one layer");
        Tensor::from_vec(vec![n, self.output_classes.len()], out)
    }

    /// Class probabilities, `(batch, classes)`; each row lies on the simplex.
    pub fn forward(&self, batch: &Tensor<F>) -> Result<Tensor<F>> {
        let mut t = self.logits(batch)?;
        let width = self.output_classes.len();
        for row in t.data_mut().chunks_mut(width) {
            softmax_in_place(row);
        }
        Ok(t)
    }

    /// Mean cross-entropy over the batch and its gradient for every tensor.
    /// `labels` are positions in the head (see [`Self::local_index`]).
    pub fn loss_and_grad(&self, batch: &Tensor<F>, labels: &[usize]) -> Result<(F, Vec<NamedTensor<F>>)> {
        let n = self.check_batch(batch)?;
        self.check_labels(n, labels)?;
        let acts = forward_pass(self, batch.data(), n, true);
        let width = self.output_classes.len();
        let logits = acts.values.last().expect("output layer");
        let inv_n = F::one() / F::of(n as f64);
        let mut loss = F::zero();
        let mut dlogits = logits.clone();
        for (row, &y) in dlogits.chunks_mut(width).zip(labels) {
            let lse = log_sum_exp(row);
            loss += lse - row[y];
            for v in row.iter_mut() {
                *v = (*v - lse).exp_det() * inv_n;
            }
            row[y] -= inv_n;
        }
        let grads = backward_pass(self, &acts, dlogits, n);
        Ok((loss * inv_n, grads))
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, batch: &Tensor<F>, labels: &[usize]) -> Result<F> {
        let logits = self.logits(batch)?;
        self.check_labels(labels.len(), labels)?;
        if logits.dims()[0] != labels.len() {
            return Err(Error::InvalidArgument("label count differs from batch size".into()));
        }
        let width = self.output_classes.len();
        let mut total = F::zero();
        for (row, &y) in logits.data().chunks(width).zip(labels) {
            total += log_sum_exp(row) - row[y];
        }
        Ok(total / F::of(labels.len().max(1) as f64))
    }

    fn check_labels(&self, n: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.output_classes.len()) {
            return Err(Error::InvalidLabel {
                label: bad as u32,
                reason: format!("head covers {} classes", self.output_classes.len()),
            });
        }
        Ok(())
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let s: F = row.iter().map(|&v| (v - m).exp_det()).sum();
    m + s.ln_det()
}

// Normalizing after the shift keeps row sums within a few ulps of 1; going
// through `exp(v - lse)` instead loses precision when logits are large.
fn softmax_in_place<F: Real>(row: &mut [F]) {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    for v in row.iter_mut() {
        *v = (*v - m).exp_det();
    }
    let s: F = row.iter().copied().sum();
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Conv {
        w: usize,
        cin: usize,
        cout: usize,
        h: usize,
        wd: usize,
    },
    Pool {
        c: usize,
        h: usize,
        wd: usize,
    },
    Relu,
    Dense {
        w: usize,
        din: usize,
        dout: usize,
    },
}

fn ops(arch: &Architecture, outputs: usize) -> Vec<Op> {
    let mut ops = Vec::new();
    let mut t = 0;
    if let Architecture::Cnn {
        channels,
        height,
        width,
        conv,
        ..
    } = arch
    {
        let (mut c, mut h, mut wd) = (*channels, *height, *width);
        for &cout in conv {
            ops.push(Op::Conv {
                w: t,
                cin: c,
                cout,
                h,
                wd,
            });
            t += 2;
            ops.push(Op::Relu);
            ops.push(Op::Pool { c: cout, h, wd });
            c = cout;
            h /= 2;
            wd /= 2;
        }
    }
    ops.push(Op::Dense {
        w: t,
        din: arch.flat_features(),
        dout: arch.hidden(),
    });
    ops.push(Op::Relu);
    ops.push(Op::Dense {
        w: t + 2,
        din: arch.hidden(),
        dout: outputs,
    });
    ops
}

struct Activations<F> {
    ops: Vec<Op>,
    /// `values[0]` is the input; `values[i + 1]` is the output of `ops[i]`.
    values: Vec<Vec<F>>,
    /// Argmax positions for each pooling op, aligned with `ops`.
    pool_idx: Vec<Vec<u32>>,
}

fn forward_pass<F: Real>(p: &ModelParameters<F>, input: &[F], n: usize, keep: bool) -> Activations<F> {
    let ops = ops(&p.arch, p.output_classes.len());
    let mut values = vec![input.to_vec()];
    let mut pool_idx = Vec::with_capacity(ops.len());
    for op in &ops {
        let x = values.last().expect("input present");
        let mut idx = Vec::new();
        let y = match *op {
            Op::Conv { w, cin, cout, h, wd } => conv_forward(
                x,
                p.tensors[w].tensor.data(),
                p.tensors[w + 1].tensor.data(),
                n,
                cin,
                cout,
                h,
                wd,
            ),
            Op::Pool { c, h, wd } => {
                let (y, i) = pool_forward(x, n, c, h, wd);
                idx = i;
                y
            }
            Op::Relu => x.iter().map(|&v| v.max(F::zero())).collect(),
            Op::Dense { w, din, dout } => {
                dense_forward(x, p.tensors[w].tensor.data(), p.tensors[w + 1].tensor.data(), n, din, dout)
            }
        };
        pool_idx.push(idx);
        if keep {
            values.push(y);
        } else {
            values = vec![y];
        }
    }
    Activations { ops, values, pool_idx }
}

fn backward_pass<F: Real>(p: &ModelParameters<F>, acts: &Activations<F>, dout: Vec<F>, n: usize) -> Vec<NamedTensor<F>> {
    let mut grads: Vec<NamedTensor<F>> = p
        .tensors
        .iter()
        .map(|t| NamedTensor {
            name: t.name.clone(),
            tensor: Tensor::zeros(t.tensor.dims().to_vec()),
        })
        .collect();
    let mut g = dout;
    for (i, op) in acts.ops.iter().enumerate().rev() {
        let x = &acts.values[i];
        let need_input_grad = i > 0;
        g = match *op {
            Op::Dense { w, din, dout } => {
                let (gw, rest) = grads.split_at_mut(w + 1);
                dense_backward(
                    x,
                    p.tensors[w].tensor.data(),
                    &g,
                    gw[w].tensor.data_mut(),
                    rest[0].tensor.data_mut(),
                    n,
                    din,
                    dout,
                    need_input_grad,
                )
            }
            Op::Relu => {
                let y = &acts.values[i + 1];
                g.iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > F::zero() { gv } else { F::zero() })
                    .collect()
            }
            Op::Pool { c, h, wd } => {
                let mut gx = vec![F::zero(); n * c * h * wd];
                for (&gi, &src) in g.iter().zip(&acts.pool_idx[i]) {
                    gx[src as usize] += gi;
                }
                gx
            }
            Op::Conv { w, cin, cout, h, wd } => {
                let (gw, rest) = grads.split_at_mut(w + 1);
                conv_backward(
                    x,
                    p.tensors[w].tensor.data(),
                    &g,
                    gw[w].tensor.data_mut(),
                    rest[0].tensor.data_mut(),
                    n,
                    cin,
                    cout,
                    h,
                    wd,
                    need_input_grad,
                )
            }
        };
    }
    grads
}

fn dense_forward<F: Real>(x: &[F], w: &[F], b: &[F], n: usize, din: usize, dout: usize) -> Vec<F> {
    let mut y = Vec::with_capacity(n * dout);
    for row in x.chunks(din).take(n) {
        for j in 0..dout {
            let wr = &w[j * din..(j + 1) * din];
            let mut acc = b[j];
            for (&a, &bv) in wr.iter().zip(row) {
                acc += a * bv;
            }
            y.push(acc);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<F: Real>(
    x: &[F],
    w: &[F],
    gy: &[F],
    gw: &mut [F],
    gb: &mut [F],
    n: usize,
    din: usize,
    dout: usize,
    input_grad: bool,
) -> Vec<F> {
    let mut gx = if input_grad { vec![F::zero(); n * din] } else { Vec::new() };
    for s in 0..n {
        let xr = &x[s * din..(s + 1) * din];
        for j in 0..dout {
            let g = gy[s * dout + j];
            if g == F::zero() {
                continue;
            }
            gb[j] += g;
            let gwr = &mut gw[j * din..(j + 1) * din];
            for (acc, &xv) in gwr.iter_mut().zip(xr) {
                *acc += g * xv;
            }
            if input_grad {
                let wr = &w[j * din..(j + 1) * din];
                for (acc, &wv) in gx[s * din..(s + 1) * din].iter_mut().zip(wr) {
                    *acc += g * wv;
                }
            }
        }
    }
    gx
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<F: Real>(
    x: &[F],
    w: &[F],
    b: &[F],
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
) -> Vec<F> {
    let plane = h * wd;
    let mut y = vec![F::zero(); n * cout * plane];
    for s in 0..n {
        let xs = &x[s * cin * plane..(s + 1) * cin * plane];
        for o in 0..cout {
            let ys = &mut y[(s * cout + o) * plane..(s * cout + o + 1) * plane];
            ys.iter_mut().for_each(|v| *v = b[o]);
            for i in 0..cin {
                let xp = &xs[i * plane..(i + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = w[((o * cin + i) * 3 + ky) * 3 + kx];
                        for oy in 0..h {
                            let iy = oy + ky;
                            if iy < 1 || iy > h {
                                continue;
                            }
                            let xrow = &xp[(iy - 1) * wd..iy * wd];
                            let yrow = &mut ys[oy * wd..(oy + 1) * wd];
                            // input column = output column + kx - 1
                            let (lo, hi) = (usize::from(kx == 0), wd - usize::from(kx == 2));
                            for ox in lo..hi {
                                yrow[ox] += wv * xrow[ox + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<F: Real>(
    x: &[F],
    w: &[F],
    gy: &[F],
    gw: &mut [F],
    gb: &mut [F],
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
    input_grad: bool,
) -> Vec<F> {
    let plane = h * wd;
    let mut gx = if input_grad { vec![F::zero(); n * cin * plane] } else { Vec::new() };
    for s in 0..n {
        for o in 0..cout {
            let gys = &gy[(s * cout + o) * plane..(s * cout + o + 1) * plane];
            gb[o] += gys.iter().copied().sum::<F>();
            for i in 0..cin {
                let xoff = (s * cin + i) * plane;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                        let wv = w[widx];
                        let mut acc = F::zero();
                        for oy in 0..h {
                            let iy = oy + ky;
                            if iy < 1 || iy > h {
                                continue;
                            }
                            let (lo, hi) = (usize::from(kx == 0), wd - usize::from(kx == 2));
                            let xrow = xoff + (iy - 1) * wd;
                            for ox in lo..hi {
                                let g = gys[oy * wd + ox];
                                acc += g * x[xrow + ox + kx - 1];
                                if input_grad {
                                    gx[xrow + ox + kx - 1] += g * wv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    gx
}

fn pool_forward<F: Real>(x: &[F], n: usize, c: usize, h: usize, wd: usize) -> (Vec<F>, Vec<u32>) {
    let (ho, wo) = (h / 2, wd / 2);
    let mut y = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for sc in 0..n * c {
        let base = sc * h * wd;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * wd + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * wd + 2 * ox + dx;
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                y.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (y, idx)
}
