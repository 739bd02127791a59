//! Tape of recorded operations with a single reverse sweep.
//!
//! Parameters enter as borrowed leaves; intermediate values are owned. Each
//! node only refers to earlier nodes, so the tape is acyclic by construction
//! and backward is one pass in reverse insertion order.

use std::borrow::Cow;

use super::array::{axpy, dot, Array, Real};
use super::ops::{check_targets, matrix_dims, softmax, PROB_FLOOR};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    /// Row `i` of the output is row `rows[i]` of the source, or zeros.
    GatherRows { src: Var, rows: Vec<Option<usize>> },
    /// x: L x d, w: F x k x d, b: F  ->  (L-k+1) x F, ReLU applied.
    Conv1dRelu { x: Var, w: Var, b: Var },
    /// m x F -> F, remembering the first argmax row per column.
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    Concat(Vec<Var>),
    /// Equal-length vectors -> N x H.
    Stack(Vec<Var>),
    /// Elementwise product with a fixed mask.
    Scale { x: Var, mask: Vec<T> },
    /// x: N x H, w: K x H, b: K  ->  N x K.
    Linear { x: Var, w: Var, b: Var },
    SoftmaxRows(Var),
    WeightedCe { p: Var, targets: Vec<usize>, alpha: Vec<T> },
    /// Scalar `sum_i c_i * x_i` with fixed coefficients.
    WeightedSum { x: Var, coeffs: Vec<T> },
}

struct Node<'p, T: Real> {
    value: Cow<'p, Array<T>>,
    op: Op<T>,
}

/// Gradients of a scalar with respect to every registered parameter, in
/// registration order.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real> {
    pub grads: Vec<Array<T>>,
}

pub struct Graph<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    params: Vec<usize>,
}

impl<'p, T: Real> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Cow<'p, Array<T>>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    /// Registers a trainable leaf. Gradients come back in registration order.
    pub fn param(&mut self, a: &'p Array<T>) -> Var {
        let v = self.push(Cow::Borrowed(a), Op::Param);
        self.params.push(v.0);
        v
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, a: Array<T>) -> Var {
        self.push(Cow::Owned(a), Op::Input)
    }

    pub fn gather_rows(&mut self, src: Var, rows: Vec<Option<usize>>) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(src), "gather source")?;
        let mut out = Array::zeros(&[rows.len(), d]);
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                if r >= n {
                    return Err(Error::Shape(format!("row {r} out of {n}")));
                }
                out.row_mut(i).copy_from_slice(self.value(src).row(r));
            }
        }
        Ok(self.push(Cow::Owned(out), Op::GatherRows { src, rows }))
    }

    pub fn conv1d_relu(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (l, d) = matrix_dims(self.value(x), "conv input")?;
        let (f, k, dw) = match self.value(w).shape() {
            &[f, k, dw] => (f, k, dw),
            s => return Err(Error::Shape(format!("conv weights must be 3-d, got {s:?}"))),
        };
        if dw != d || self.value(b).len() != f {
            return Err(Error::Shape(format!(
                "conv weights {f}x{k}x{dw}, bias {}, input width {d}",
                self.value(b).len()
            )));
        }
        if k == 0 || l < k {
            return Err(Error::Shape(format!("sequence length {l} shorter than kernel {k}")));
        }
        let m = l - k + 1;
        let span = k * d;
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * f];
        for i in 0..m {
            let window = &xv[i * d..i * d + span];
            for r in 0..f {
                let z = bv[r] + dot(window, &wv[r * span..(r + 1) * span]);
                out[i * f + r] = z.max(T::zero());
            }
        }
        let out = Array::from_vec(&[m, f], out)?;
        Ok(self.push(Cow::Owned(out), Op::Conv1dRelu { x, w, b }))
    }

    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let (m, f) = matrix_dims(self.value(x), "pool input")?;
        if m == 0 {
            return Err(Error::Empty("feature map"));
        }
        let a = self.value(x);
        let mut best = a.row(0).to_vec();
        let mut argmax = vec![0; f];
        for i in 1..m {
            for (r, &v) in a.row(i).iter().enumerate() {
                if v > best[r] {
                    best[r] = v;
                    argmax[r] = i;
                }
            }
        }
        Ok(self.push(Cow::Owned(Array::vector(best)), Op::MaxPoolRows { x, argmax }))
    }

    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        let data: Vec<T> = parts.iter().flat_map(|&p| self.value(p).data().to_vec()).collect();
        self.push(Cow::Owned(Array::vector(data)), Op::Concat(parts))
    }

    pub fn stack(&mut self, rows: Vec<Var>) -> Result<Var> {
        let h = rows.first().map_or(0, |&r| self.value(r).len());
        if rows.iter().any(|&r| self.value(r).len() != h) {
            return Err(Error::Shape("stacked rows differ in length".into()));
        }
        let data: Vec<T> = rows.iter().flat_map(|&r| self.value(r).data().to_vec()).collect();
        let out = Array::from_vec(&[rows.len(), h], data)?;
        Ok(self.push(Cow::Owned(out), Op::Stack(rows)))
    }

    pub fn scale(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let a = self.value(x);
        if mask.len() != a.len() {
            return Err(Error::Shape(format!("mask {} vs value {}", mask.len(), a.len())));
        }
        let data = a.data().iter().zip(&mask).map(|(&v, &s)| v * s).collect();
        let out = Array::from_vec(a.shape(), data)?;
        Ok(self.push(Cow::Owned(out), Op::Scale { x, mask }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, h) = matrix_dims(self.value(x), "linear input")?;
        let (k, hw) = matrix_dims(self.value(w), "linear weights")?;
        if hw != h || self.value(b).len() != k {
            return Err(Error::Shape(format!(
                "linear weights {k}x{hw}, bias {}, input width {h}",
                self.value(b).len()
            )));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b).data());
        let mut out = Array::zeros(&[n, k]);
        for i in 0..n {
            for j in 0..k {
                out.row_mut(i)[j] = bv[j] + dot(xv.row(i), wv.row(j));
            }
        }
        Ok(self.push(Cow::Owned(out), Op::Linear { x, w, b }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, k) = matrix_dims(self.value(x), "logits")?;
        let a = self.value(x);
        let data: Vec<T> = (0..n).flat_map(|i| softmax(a.row(i))).collect();
        let out = Array::from_vec(&[n, k], data)?;
        Ok(self.push(Cow::Owned(out), Op::SoftmaxRows(x)))
    }

    pub fn weighted_ce(&mut self, p: Var, targets: Vec<usize>, alpha: Vec<T>) -> Result<Var> {
        let probs = self.value(p);
        let (n, k) = matrix_dims(probs, "probabilities")?;
        check_targets(n, k, &targets, &alpha)?;
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        let floor = T::lit(PROB_FLOOR);
        let total = targets
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &y)| acc + alpha[y] * probs.row(i)[y].max(floor).ln());
        let loss = -total / T::lit(n as f64);
        Ok(self.push(Cow::Owned(Array::scalar(loss)), Op::WeightedCe { p, targets, alpha }))
    }

    pub fn weighted_sum(&mut self, x: Var, coeffs: Vec<T>) -> Result<Var> {
        let a = self.value(x);
        if coeffs.len() != a.len() {
            return Err(Error::Shape(format!("{} coefficients for {} values", coeffs.len(), a.len())));
        }
        let s = dot(a.data(), &coeffs);
        Ok(self.push(Cow::Owned(Array::scalar(s)), Op::WeightedSum { x, coeffs }))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Array::zeros(self.value(loss).shape());
        seed.data_mut()[0] = T::one();
        adj[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    adj[idx] = Some(g);
                }
                Op::GatherRows { src, rows } => {
                    let acc = self.adj_mut(&mut adj, *src);
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = *r {
                            axpy(T::one(), g.row(i), acc.row_mut(r));
                        }
                    }
                }
                Op::Conv1dRelu { x, w, b } => self.conv_backward(&mut adj, idx, &g, *x, *w, *b),
                Op::MaxPoolRows { x, argmax } => {
                    let acc = self.adj_mut(&mut adj, *x);
                    for (r, &i) in argmax.iter().enumerate() {
                        let gv = g.data()[r];
                        acc.row_mut(i)[r] = acc.row(i)[r] + gv;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let acc = self.adj_mut(&mut adj, p);
                        axpy(T::one(), &g.data()[off..off + n], acc.data_mut());
                        off += n;
                    }
                }
                Op::Stack(rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        let acc = self.adj_mut(&mut adj, r);
                        axpy(T::one(), g.row(i), acc.data_mut());
                    }
                }
                Op::Scale { x, mask } => {
                    let acc = self.adj_mut(&mut adj, *x);
                    for ((a, &gv), &s) in acc.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *a = *a + gv * s;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (n, k) = (g.shape()[0], g.shape()[1]);
                    {
                        let wv = self.value(*w);
                        let acc = self.adj_mut(&mut adj, *x);
                        for i in 0..n {
                            for j in 0..k {
                                axpy(g.row(i)[j], wv.row(j), acc.row_mut(i));
                            }
                        }
                    }
                    {
                        let xv = self.value(*x);
                        let acc = self.adj_mut(&mut adj, *w);
                        for i in 0..n {
                            for j in 0..k {
                                axpy(g.row(i)[j], xv.row(i), acc.row_mut(j));
                            }
                        }
                    }
                    let acc = self.adj_mut(&mut adj, *b);
                    for i in 0..n {
                        axpy(T::one(), g.row(i), acc.data_mut());
                    }
                }
                Op::SoftmaxRows(x) => {
                    let p = &node.value;
                    let acc = self.adj_mut(&mut adj, *x);
                    for i in 0..g.shape()[0] {
                        let (pr, gr) = (p.row(i), g.row(i));
                        let inner = dot(pr, gr);
                        for (j, a) in acc.row_mut(i).iter_mut().enumerate() {
                            *a = *a + pr[j] * (gr[j] - inner);
                        }
                    }
                }
                Op::WeightedCe { p, targets, alpha } => {
                    let scale = g.data()[0] / T::lit(targets.len() as f64);
                    let floor = T::lit(PROB_FLOOR);
                    let probs = self.value(*p);
                    let vals: Vec<(usize, usize, T)> = targets
                        .iter()
                        .enumerate()
                        .filter_map(|(i, &y)| {
                            let q = probs.row(i)[y];
                            // The clamp is flat below the floor.
                            (q > floor).then(|| (i, y, -scale * alpha[y] / q))
                        })
                        .collect();
                    let acc = self.adj_mut(&mut adj, *p);
                    for (i, y, v) in vals {
                        acc.row_mut(i)[y] = acc.row(i)[y] + v;
                    }
                }
                Op::WeightedSum { x, coeffs } => {
                    let acc = self.adj_mut(&mut adj, *x);
                    axpy(g.data()[0], coeffs, acc.data_mut());
                }
            }
        }

        let grads = self
            .params
            .iter()
            .map(|&i| adj[i].take().unwrap_or_else(|| Array::zeros(self.nodes[i].value.shape())))
            .collect();
        Ok(Gradients { grads })
    }

    fn adj_mut<'a>(&self, adj: &'a mut [Option<Array<T>>], v: Var) -> &'a mut Array<T> {
        adj[v.0].get_or_insert_with(|| Array::zeros(self.nodes[v.0].value.shape()))
    }

    fn conv_backward(&self, adj: &mut [Option<Array<T>>], idx: usize, g: &Array<T>, x: Var, w: Var, b: Var) {
        let out = &self.nodes[idx].value;
        let (m, f) = (out.shape()[0], out.shape()[1]);
        let xv = self.value(x);
        let wv = self.value(w);
        let d = xv.shape()[1];
        let span = wv.shape()[1] * d;
        // Gradient through ReLU: zero where the output was clamped.
        let gz: Vec<T> = g
            .data()
            .iter()
            .zip(out.data())
            .map(|(&gv, &o)| if o > T::zero() { gv } else { T::zero() })
            .collect();
        {
            let acc = self.adj_mut(adj, b);
            for i in 0..m {
                axpy(T::one(), &gz[i * f..(i + 1) * f], acc.data_mut());
            }
        }
        {
            let acc = self.adj_mut(adj, w);
            let ad = acc.data_mut();
            for i in 0..m {
                let window = &xv.data()[i * d..i * d + span];
                for r in 0..f {
                    let gv = gz[i * f + r];
                    if gv != T::zero() {
                        axpy(gv, window, &mut ad[r * span..(r + 1) * span]);
                    }
                }
            }
        }
        if matches!(self.nodes[x.0].op, Op::Input) {
            return;
        }
        let acc = self.adj_mut(adj, x);
        let ad = acc.data_mut();
        for i in 0..m {
            for r in 0..f {
                let gv = gz[i * f + r];
                if gv != T::zero() {
                    axpy(gv, &wv.data()[r * span..(r + 1) * span], &mut ad[i * d..i * d + span]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ops::{conv1d_valid, global_max_pool, linear_softmax};

    fn arr(shape: &[usize], data: &[f64]) -> Array<f64> {
        Array::from_vec(shape, data.to_vec()).unwrap()
    }

    /// Central differences of `f` around every entry of `params[which]`.
    fn numeric_grad(
        params: &[Array<f64>],
        which: usize,
        f: &dyn Fn(&[Array<f64>]) -> f64,
        h: f64,
    ) -> Vec<f64> {
        let mut ps = params.to_vec();
        (0..params[which].len())
            .map(|i| {
                let orig = ps[which].data()[i];
                ps[which].data_mut()[i] = orig + h;
                let up = f(&ps);
                ps[which].data_mut()[i] = orig - h;
                let down = f(&ps);
                ps[which].data_mut()[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn linear_gradient_is_transpose_product() {
        let x = arr(&[2, 3], &[1., 2., 3., -1., 0.5, 4.]);
        let w = arr(&[2, 3], &[0.1, -0.2, 0.3, 0.7, 0.0, -1.0]);
        let b = arr(&[2], &[0.5, -0.5]);
        let c = vec![1.0, -2.0, 3.0, 0.25];
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.param(&x), g.param(&w), g.param(&b));
        let y = g.linear(xv, wv, bv).unwrap();
        let s = g.weighted_sum(y, c.clone()).unwrap();
        let grads = g.backward(s).unwrap().grads;
        // dS/dW[j] = sum_i c[i,j] x[i];  dS/dx[i] = sum_j c[i,j] W[j];  dS/db = sum_i c[i]
        let cm = |i: usize, j: usize| c[i * 2 + j];
        for j in 0..2 {
            for t in 0..3 {
                let want = cm(0, j) * x.row(0)[t] + cm(1, j) * x.row(1)[t];
                assert_eq!(grads[1].row(j)[t], want);
            }
        }
        for i in 0..2 {
            for t in 0..3 {
                let want = cm(i, 0) * w.row(0)[t] + cm(i, 1) * w.row(1)[t];
                assert_eq!(grads[0].row(i)[t], want);
            }
        }
        assert_eq!(grads[2].data(), &[1.0 + 3.0, -2.0 + 0.25]);
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let a = arr(&[2], &[1., 2.]);
        let unused = arr(&[3, 2], &[1.; 6]);
        let mut g = Graph::new();
        let av = g.param(&a);
        g.param(&unused);
        let s = g.weighted_sum(av, vec![1.0, 1.0]).unwrap();
        let grads = g.backward(s).unwrap().grads;
        assert_eq!(grads[1], Array::zeros(&[3, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let a = arr(&[2], &[1., 2.]);
        let mut g = Graph::new();
        let av = g.param(&a);
        assert!(matches!(g.backward(av), Err(Error::Shape(_))));
    }

    #[test]
    fn batched_ops_agree_with_reference_primitives() {
        let x = arr(&[4, 2], &[1., 0., 0., 1., 2., 2., -1., 3.]);
        let w = arr(&[2, 2, 2], &[1., 1., 1., 1., 0.5, -1., 0.25, 2.]);
        let b = arr(&[2], &[0.0, -0.5]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.param(&w), g.param(&b));
        let c = g.conv1d_relu(xv, wv, bv).unwrap();
        let pooled = g.max_pool_rows(c).unwrap();
        for r in 0..2 {
            let wr = arr(&[2, 2], &w.data()[r * 4..(r + 1) * 4]);
            let col = conv1d_valid(&x, &wr, b.data()[r]).unwrap();
            let got: Vec<f64> = (0..3).map(|i| g.value(c).row(i)[r]).collect();
            assert_eq!(got, col);
            assert_eq!(g.value(pooled).data()[r], global_max_pool(&col).unwrap().0);
        }

        let h = arr(&[1, 2], &[0.3, -0.7]);
        let wc = arr(&[3, 2], &[1., 2., -1., 0.5, 0., 0.]);
        let bc = arr(&[3], &[0.1, 0.2, 0.3]);
        let (hv, wcv, bcv) = (g.input(h.clone()), g.param(&wc), g.param(&bc));
        let z = g.linear(hv, wcv, bcv).unwrap();
        let p = g.softmax_rows(z).unwrap();
        let want = linear_softmax(h.data(), &wc, bc.data()).unwrap();
        for (a, b) in g.value(p).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn max_pool_tie_routes_to_first() {
        let x = arr(&[2, 1], &[3., 3.]);
        let mut g = Graph::new();
        let xv = g.param(&x);
        let p = g.max_pool_rows(xv).unwrap();
        let s = g.weighted_sum(p, vec![1.0]).unwrap();
        let grads = g.backward(s).unwrap().grads;
        assert_eq!(grads[0].data(), &[1.0, 0.0]);
    }

    #[test]
    fn primitives_match_finite_differences() {
        // x kept away from ReLU and max kinks by construction of the values.
        let x = arr(&[5, 2], &[0.9, -0.4, 0.2, 1.3, -0.7, 0.5, 1.1, 0.8, -0.3, -1.2]);
        let w = arr(&[2, 2, 2], &[0.6, -0.2, 0.4, 0.9, -0.5, 0.3, 0.8, -0.1]);
        let b = arr(&[2], &[0.5, 0.45]);
        let wc = arr(&[3, 2], &[0.7, -0.3, -0.6, 0.2, 0.1, 0.9]);
        let bc = arr(&[3], &[0.05, -0.1, 0.2]);
        let emb = arr(&[3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        let params = vec![x, w, b, wc, bc, emb];

        let build = |ps: &[Array<f64>]| -> (f64, Option<Gradients<f64>>) {
            let mut g = Graph::new();
            let vs: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
            let gathered = g.gather_rows(vs[5], vec![Some(2), None, Some(0), Some(2), Some(1)]).unwrap();
            let c = g.conv1d_relu(vs[0], vs[1], vs[2]).unwrap();
            let c2 = g.conv1d_relu(gathered, vs[1], vs[2]).unwrap();
            let p1 = g.max_pool_rows(c).unwrap();
            let p2 = g.max_pool_rows(c2).unwrap();
            let h = g.concat(vec![p1]);
            let h2 = g.concat(vec![p2]);
            let hs = g.stack(vec![h, h2]).unwrap();
            let hd = g.scale(hs, vec![1.5, 0.5, 2.0, 1.0]).unwrap();
            let z = g.linear(hd, vs[3], vs[4]).unwrap();
            let p = g.softmax_rows(z).unwrap();
            let l = g.weighted_ce(p, vec![2, 0], vec![1.0, 1.0, 2.5]).unwrap();
            let val = g.value(l).data()[0];
            (val, Some(g.backward(l).unwrap()))
        };
        let (_, grads) = build(&params);
        let grads = grads.unwrap().grads;
        let f = |ps: &[Array<f64>]| build(ps).0;
        for which in 0..params.len() {
            let num = numeric_grad(&params, which, &f, 1e-5);
            for (a, n) in grads[which].data().iter().zip(&num) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel < 1e-6, "param {which}: analytic {a} numeric {n}");
            }
        }
    }
}
