//! Dense 2-D tensors with reverse-mode automatic differentiation.
//!
//! Just enough machinery for a small transformer encoder: matmul (backed by
//! `matrixmultiply`), softmax, layer norm, GELU, embedding lookup, pooling,
//! cosine similarity, a fused cross-entropy, and Adam. Everything is
//! generic over [`Scalar`] so the same graph code runs in `f32` for training
//! and in `f64` for gradient checking.
//!
//! Shapes are `(rows, cols)`; scalars are `1×1`. Ops return `Result` and
//! never panic on shape errors. A graph is confined to one thread; separate
//! graphs may live on separate threads.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

mod adam;
mod check;
mod checkpoint;

pub use adam::AdamState;
pub use check::{finite_diff_check, FiniteDiffReport};
pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, CheckpointEntry, TensorMeta};

/// Element type of a tensor. Implemented for `f32` (training) and `f64`
/// (gradient-check mode).
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + std::iter::Sum + Send + Sync + 'static
{
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c ← alpha * a·b + beta * c` with explicit strides, row-major buffers.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        assert!(c.len() >= m * n && a.len() >= m * k && b.len() >= k * n);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    ) {
        assert!(c.len() >= m * n && a.len() >= m * k && b.len() >= k * n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// Norms below this are treated as degenerate for cosine/normalize purposes.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("degenerate norm in {op}: vector has (near-)zero length")]
    DegenerateNorm { op: &'static str },
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("token id {id} out of range (vocab {vocab})")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("empty row selection in {op}")]
    EmptySelection { op: &'static str },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

/// Accumulates gradients for one backward pass, keyed by node identity.
///
/// Kept separate from the per-node `grad` buffers so that repeated
/// `backward()` calls add independent, correctly propagated contributions
/// instead of re-propagating already accumulated values.
pub struct GradSink<F: Scalar> {
    bufs: HashMap<usize, Vec<F>>,
}

impl<F: Scalar> GradSink<F> {
    fn new() -> Self {
        GradSink {
            bufs: HashMap::new(),
        }
    }

    fn take(&mut self, key: usize) -> Option<Vec<F>> {
        self.bufs.remove(&key)
    }

    /// Add `delta` into the pending gradient of `t`.
    pub fn add(&mut self, t: &Tensor<F>, delta: &[F]) {
        let buf = self
            .bufs
            .entry(t.node_id())
            .or_insert_with(|| vec![F::zero(); t.len()]);
        debug_assert_eq!(buf.len(), delta.len());
        for (b, d) in buf.iter_mut().zip(delta) {
            *b = *b + *d;
        }
    }
}

type BackwardFn<F> = Box<dyn Fn(&[F], &[F], &mut GradSink<F>)>;

struct Node<F: Scalar> {
    rows: usize,
    cols: usize,
    values: Vec<F>,
    grad: Vec<F>,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
    op: &'static str,
}

/// A reference-counted tensor node in a computation graph.
///
/// `Clone` is shallow: clones share the same values and gradient buffer.
pub struct Tensor<F: Scalar>(Rc<RefCell<Node<F>>>);

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.borrow();
        write!(f, "Tensor[{}x{} {}]", n.rows, n.cols, n.op)
    }
}

impl<F: Scalar> Tensor<F> {
    fn new_node(node: Node<F>) -> Self {
        Tensor(Rc::new(RefCell::new(node)))
    }

    fn leaf(rows: usize, cols: usize, values: Vec<F>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        let grad = vec![F::zero(); values.len()];
        Tensor::new_node(Node {
            rows,
            cols,
            values,
            grad,
            parents: Vec::new(),
            backward: None,
            op: "leaf",
        })
    }

    fn op_node(
        rows: usize,
        cols: usize,
        values: Vec<F>,
        parents: Vec<Tensor<F>>,
        op: &'static str,
        backward: BackwardFn<F>,
    ) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        let grad = vec![F::zero(); values.len()];
        Tensor::new_node(Node {
            rows,
            cols,
            values,
            grad,
            parents,
            backward: Some(backward),
            op,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<F>) -> Result<Self, TensorError> {
        if values.len() != rows * cols {
            return Err(shape_err(
                "from_vec",
                format!("{} values for {}x{}", values.len(), rows, cols),
            ));
        }
        Ok(Tensor::leaf(rows, cols, values))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::leaf(rows, cols, vec![F::zero(); rows * cols])
    }

    pub fn full(rows: usize, cols: usize, v: F) -> Self {
        Tensor::leaf(rows, cols, vec![v; rows * cols])
    }

    pub fn scalar(v: F) -> Self {
        Tensor::leaf(1, 1, vec![v])
    }

    /// Gaussian init, Box-Muller over the given rng so the draw sequence is
    /// identical for f32 and f64 builds.
    pub fn randn<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let n = rows * cols;
        let mut values = Vec::with_capacity(n);
        while values.len() < n {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            values.push(F::from_f64(r * theta.cos() * std));
            if values.len() < n {
                values.push(F::from_f64(r * theta.sin() * std));
            }
        }
        Tensor::leaf(rows, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.0.borrow().rows
    }

    pub fn cols(&self) -> usize {
        self.0.borrow().cols
    }

    pub fn shape(&self) -> (usize, usize) {
        let n = self.0.borrow();
        (n.rows, n.cols)
    }

    pub fn len(&self) -> usize {
        let n = self.0.borrow();
        n.rows * n.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn node_id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub fn values(&self) -> Ref<'_, [F]> {
        Ref::map(self.0.borrow(), |n| n.values.as_slice())
    }

    pub fn value_vec(&self) -> Vec<F> {
        self.0.borrow().values.clone()
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> F {
        let n = self.0.borrow();
        debug_assert_eq!(n.values.len(), 1);
        n.values[0]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        let n = self.0.borrow();
        n.values[r * n.cols + c]
    }

    pub fn grad(&self) -> Ref<'_, [F]> {
        Ref::map(self.0.borrow(), |n| n.grad.as_slice())
    }

    pub fn grad_vec(&self) -> Vec<F> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        for g in self.0.borrow_mut().grad.iter_mut() {
            *g = F::zero();
        }
    }

    /// Overwrite values in place (same length required). Used by the
    /// optimizer and by finite differencing; does not touch the graph.
    pub fn set_values(&self, values: &[F]) {
        let mut n = self.0.borrow_mut();
        assert_eq!(n.values.len(), values.len());
        n.values.copy_from_slice(values);
    }

    pub fn set_value_at(&self, idx: usize, v: F) {
        self.0.borrow_mut().values[idx] = v;
    }

    fn add_into_grad(&self, delta: &[F]) {
        let mut n = self.0.borrow_mut();
        debug_assert_eq!(n.grad.len(), delta.len());
        for (g, d) in n.grad.iter_mut().zip(delta) {
            *g = *g + *d;
        }
    }

    /// Deep copy with a fresh node (no parents, zero grad).
    pub fn detached(&self) -> Tensor<F> {
        let n = self.0.borrow();
        Tensor::leaf(n.rows, n.cols, n.values.clone())
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        let n = self.0.borrow();
        let values = n.values.iter().map(|v| G::from_f64(v.as_f64())).collect();
        Tensor::leaf(n.rows, n.cols, values)
    }

    // ---- forward ops ----

    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let (m, k) = self.shape();
        let (k2, n) = other.shape();
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm_strided(
            m,
            k,
            n,
            F::one(),
            &self.values(),
            k as isize,
            1,
            &other.values(),
            n as isize,
            1,
            F::zero(),
            &mut out,
        );
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::op_node(
            m,
            n,
            out,
            vec![self.clone(), other.clone()],
            "matmul",
            Box::new(move |_, g, sink| {
                let av = a.value_vec();
                let bv = b.value_vec();
                // dA = g · Bᵀ  (m×k)
                let mut ga = vec![F::zero(); m * k];
                F::gemm_strided(m, n, k, F::one(), g, n as isize, 1, &bv, 1, n as isize, F::zero(), &mut ga);
                sink.add(&a, &ga);
                // dB = Aᵀ · g  (k×n)
                let mut gb = vec![F::zero(); k * n];
                F::gemm_strided(k, m, n, F::one(), &av, 1, k as isize, g, n as isize, 1, F::zero(), &mut gb);
                sink.add(&b, &gb);
            }),
        ))
    }

    pub fn transpose(&self) -> Tensor<F> {
        let (r, c) = self.shape();
        let v = self.values();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        drop(v);
        let a = self.clone();
        Tensor::op_node(
            c,
            r,
            out,
            vec![self.clone()],
            "transpose",
            Box::new(move |_, g, sink| {
                let mut ga = vec![F::zero(); r * c];
                for i in 0..c {
                    for j in 0..r {
                        ga[j * c + i] = g[i * r + j];
                    }
                }
                sink.add(&a, &ga);
            }),
        )
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let (r, c) = self.shape();
        if other.shape() != (r, c) {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let out = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(x, y)| *x + *y)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone(), other.clone()],
            "add",
            Box::new(move |_, g, sink| {
                sink.add(&a, g);
                sink.add(&b, g);
            }),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let (r, c) = self.shape();
        if other.shape() != (r, c) {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let out = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(x, y)| *x * *y)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone(), other.clone()],
            "mul",
            Box::new(move |_, g, sink| {
                let av = a.value_vec();
                let bv = b.value_vec();
                let ga: Vec<F> = g.iter().zip(&bv).map(|(gi, bi)| *gi * *bi).collect();
                sink.add(&a, &ga);
                let gb: Vec<F> = g.iter().zip(&av).map(|(gi, ai)| *gi * *ai).collect();
                sink.add(&b, &gb);
            }),
        ))
    }

    /// Multiply by a compile-time constant (not a graph node).
    pub fn scale(&self, factor: F) -> Tensor<F> {
        let (r, c) = self.shape();
        let out = self.values().iter().map(|x| *x * factor).collect();
        let a = self.clone();
        Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone()],
            "scale",
            Box::new(move |_, g, sink| {
                let ga: Vec<F> = g.iter().map(|gi| *gi * factor).collect();
                sink.add(&a, &ga);
            }),
        )
    }

    /// Broadcast-add a `1×n` row vector to every row.
    pub fn add_bias(&self, bias: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let (r, c) = self.shape();
        if bias.shape() != (1, c) {
            return Err(shape_err(
                "add_bias",
                format!("matrix {:?}, bias {:?}", self.shape(), bias.shape()),
            ));
        }
        let bv = bias.value_vec();
        let out = self
            .values()
            .chunks(c)
            .flat_map(|row| row.iter().zip(&bv).map(|(x, b)| *x + *b).collect::<Vec<_>>())
            .collect();
        let (a, b) = (self.clone(), bias.clone());
        Ok(Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone(), bias.clone()],
            "add_bias",
            Box::new(move |_, g, sink| {
                sink.add(&a, g);
                let mut gb = vec![F::zero(); c];
                for row in g.chunks(c) {
                    for (j, v) in row.iter().enumerate() {
                        gb[j] = gb[j] + *v;
                    }
                }
                sink.add(&b, &gb);
            }),
        ))
    }

    /// Broadcast-multiply every row by a `1×n` row vector.
    pub fn mul_bias(&self, gain: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let (r, c) = self.shape();
        if gain.shape() != (1, c) {
            return Err(shape_err(
                "mul_bias",
                format!("matrix {:?}, gain {:?}", self.shape(), gain.shape()),
            ));
        }
        let gv = gain.value_vec();
        let out = self
            .values()
            .chunks(c)
            .flat_map(|row| row.iter().zip(&gv).map(|(x, w)| *x * *w).collect::<Vec<_>>())
            .collect();
        let (a, b) = (self.clone(), gain.clone());
        Ok(Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone(), gain.clone()],
            "mul_bias",
            Box::new(move |_, g, sink| {
                let av = a.value_vec();
                let gv = b.value_vec();
                let mut ga = vec![F::zero(); r * c];
                let mut gb = vec![F::zero(); c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[i * c + j] * gv[j];
                        gb[j] = gb[j] + g[i * c + j] * av[i * c + j];
                    }
                }
                sink.add(&a, &ga);
                sink.add(&b, &gb);
            }),
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Tensor<F> {
        let (r, c) = self.shape();
        let v = self.values();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[i * c + j] = e;
                sum = sum + e;
            }
            for j in 0..c {
                out[i * c + j] = out[i * c + j] / sum;
            }
        }
        drop(v);
        let a = self.clone();
        Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone()],
            "softmax_rows",
            Box::new(move |y, g, sink| {
                // dx = y ⊙ (g − Σ_j g_j y_j) per row
                let mut ga = vec![F::zero(); r * c];
                for i in 0..r {
                    let ys = &y[i * c..(i + 1) * c];
                    let gs = &g[i * c..(i + 1) * c];
                    let dot: F = ys.iter().zip(gs).map(|(yi, gi)| *yi * *gi).sum();
                    for j in 0..c {
                        ga[i * c + j] = ys[j] * (gs[j] - dot);
                    }
                }
                sink.add(&a, &ga);
            }),
        )
    }

    /// Row-wise standardization (zero mean, unit variance), no affine part.
    pub fn layer_norm(&self, eps: F) -> Tensor<F> {
        let (r, c) = self.shape();
        let v = self.values();
        let nf = F::from_f64(c as f64);
        let mut out = vec![F::zero(); r * c];
        let mut inv_std = vec![F::zero(); r];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let mean = row.iter().cloned().sum::<F>() / nf;
            let var = row
                .iter()
                .map(|x| (*x - mean) * (*x - mean))
                .sum::<F>()
                / nf;
            let s = F::one() / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * s;
            }
        }
        drop(v);
        let a = self.clone();
        Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone()],
            "layer_norm",
            Box::new(move |y, g, sink| {
                // dx_i = s * (g_i − mean(g) − y_i * mean(g ⊙ y))
                let mut ga = vec![F::zero(); r * c];
                for i in 0..r {
                    let ys = &y[i * c..(i + 1) * c];
                    let gs = &g[i * c..(i + 1) * c];
                    let gm = gs.iter().cloned().sum::<F>() / nf;
                    let gym: F = ys.iter().zip(gs).map(|(yi, gi)| *yi * *gi).sum::<F>() / nf;
                    for j in 0..c {
                        ga[i * c + j] = inv_std[i] * (gs[j] - gm - ys[j] * gym);
                    }
                }
                sink.add(&a, &ga);
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<F> {
        let (r, c) = self.shape();
        let cst = F::from_f64(0.7978845608028654); // sqrt(2/pi)
        let k = F::from_f64(0.044715);
        let half = F::from_f64(0.5);
        let three = F::from_f64(3.0);
        let out = self
            .values()
            .iter()
            .map(|&x| {
                let u = cst * (x + k * x * x * x);
                half * x * (F::one() + u.tanh())
            })
            .collect();
        let a = self.clone();
        Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone()],
            "gelu",
            Box::new(move |_, g, sink| {
                let av = a.value_vec();
                let ga: Vec<F> = av
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| {
                        let u = cst * (x + k * x * x * x);
                        let t = u.tanh();
                        let du = cst * (F::one() + three * k * x * x);
                        gi * (half * (F::one() + t) + half * x * (F::one() - t * t) * du)
                    })
                    .collect();
                sink.add(&a, &ga);
            }),
        )
    }

    /// Gather rows of an embedding table by token id.
    pub fn embed_lookup(table: &Tensor<F>, ids: &[usize]) -> Result<Tensor<F>, TensorError> {
        let (vocab, d) = table.shape();
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IdOutOfRange { id, vocab });
            }
        }
        let v = table.values();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&v[id * d..(id + 1) * d]);
        }
        drop(v);
        let t = table.clone();
        let ids_owned: Vec<usize> = ids.to_vec();
        let n = ids_owned.len();
        Ok(Tensor::op_node(
            n,
            d,
            out,
            vec![table.clone()],
            "embed_lookup",
            Box::new(move |_, g, sink| {
                let mut gt = vec![F::zero(); vocab * d];
                for (i, &id) in ids_owned.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] = gt[id * d + j] + g[i * d + j];
                    }
                }
                sink.add(&t, &gt);
            }),
        ))
    }

    pub fn slice_rows(&self, lo: usize, hi: usize) -> Result<Tensor<F>, TensorError> {
        let (r, c) = self.shape();
        if lo >= hi || hi > r {
            return Err(shape_err("slice_rows", format!("{lo}..{hi} of {r} rows")));
        }
        let out = self.values()[lo * c..hi * c].to_vec();
        let a = self.clone();
        Ok(Tensor::op_node(
            hi - lo,
            c,
            out,
            vec![self.clone()],
            "slice_rows",
            Box::new(move |_, g, sink| {
                let mut ga = vec![F::zero(); r * c];
                ga[lo * c..hi * c].copy_from_slice(g);
                sink.add(&a, &ga);
            }),
        ))
    }

    pub fn slice_cols(&self, lo: usize, hi: usize) -> Result<Tensor<F>, TensorError> {
        let (r, c) = self.shape();
        if lo >= hi || hi > c {
            return Err(shape_err("slice_cols", format!("{lo}..{hi} of {c} cols")));
        }
        let w = hi - lo;
        let v = self.values();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + lo..i * c + hi]);
        }
        drop(v);
        let a = self.clone();
        Ok(Tensor::op_node(
            r,
            w,
            out,
            vec![self.clone()],
            "slice_cols",
            Box::new(move |_, g, sink| {
                let mut ga = vec![F::zero(); r * c];
                for i in 0..r {
                    ga[i * c + lo..i * c + hi].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                sink.add(&a, &ga);
            }),
        ))
    }

    /// Stack tensors with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Tensor<F>]) -> Result<Tensor<F>, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptySelection { op: "concat_rows" });
        }
        let c = parts[0].cols();
        let mut total = 0;
        for p in parts {
            if p.cols() != c {
                return Err(shape_err(
                    "concat_rows",
                    format!("col counts differ: {} vs {}", c, p.cols()),
                ));
            }
            total += p.rows();
        }
        let mut out = Vec::with_capacity(total * c);
        for p in parts {
            out.extend_from_slice(&p.values());
        }
        let owned: Vec<Tensor<F>> = parts.to_vec();
        Ok(Tensor::op_node(
            total,
            c,
            out,
            parts.to_vec(),
            "concat_rows",
            Box::new(move |_, g, sink| {
                let mut off = 0;
                for p in &owned {
                    let n = p.len();
                    sink.add(p, &g[off..off + n]);
                    off += n;
                }
            }),
        ))
    }

    /// Concatenate tensors with equal row counts side by side.
    pub fn concat_cols(parts: &[Tensor<F>]) -> Result<Tensor<F>, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptySelection { op: "concat_cols" });
        }
        let r = parts[0].rows();
        let mut total = 0;
        for p in parts {
            if p.rows() != r {
                return Err(shape_err(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", r, p.rows()),
                ));
            }
            total += p.cols();
        }
        let mut out = vec![F::zero(); r * total];
        let mut off = 0;
        for p in parts {
            let w = p.cols();
            let v = p.values();
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let owned: Vec<Tensor<F>> = parts.to_vec();
        Ok(Tensor::op_node(
            r,
            total,
            out,
            parts.to_vec(),
            "concat_cols",
            Box::new(move |_, g, sink| {
                let mut off = 0;
                for p in &owned {
                    let w = p.cols();
                    let mut gp = vec![F::zero(); r * w];
                    for i in 0..r {
                        gp[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + off..i * total + off + w]);
                    }
                    sink.add(p, &gp);
                    off += w;
                }
            }),
        ))
    }

    /// Mean of the selected rows, `1×cols`.
    pub fn mean_rows(&self, selected: &[usize]) -> Result<Tensor<F>, TensorError> {
        let (r, c) = self.shape();
        if selected.is_empty() {
            return Err(TensorError::EmptySelection { op: "mean_rows" });
        }
        for &i in selected {
            if i >= r {
                return Err(shape_err("mean_rows", format!("row {i} of {r}")));
            }
        }
        let v = self.values();
        let k = F::from_f64(selected.len() as f64);
        let mut out = vec![F::zero(); c];
        for &i in selected {
            for j in 0..c {
                out[j] = out[j] + v[i * c + j];
            }
        }
        for o in out.iter_mut() {
            *o = *o / k;
        }
        drop(v);
        let a = self.clone();
        let sel: Vec<usize> = selected.to_vec();
        Ok(Tensor::op_node(
            1,
            c,
            out,
            vec![self.clone()],
            "mean_rows",
            Box::new(move |_, g, sink| {
                let mut ga = vec![F::zero(); r * c];
                for &i in &sel {
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + g[j] / k;
                    }
                }
                sink.add(&a, &ga);
            }),
        ))
    }

    /// Row-wise L2 normalization. Zero rows map to zero rows and are logged.
    pub fn l2_normalize_rows(&self) -> Tensor<F> {
        let (r, c) = self.shape();
        let v = self.values();
        let mut out = vec![F::zero(); r * c];
        let mut norms = vec![F::zero(); r];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let norm = row.iter().map(|x| *x * *x).sum::<F>().sqrt();
            norms[i] = norm;
            if norm.as_f64() < NORM_FLOOR {
                log::warn!("l2_normalize_rows: row {i} has zero norm, left as zero");
                continue;
            }
            for j in 0..c {
                out[i * c + j] = row[j] / norm;
            }
        }
        drop(v);
        let a = self.clone();
        Tensor::op_node(
            r,
            c,
            out,
            vec![self.clone()],
            "l2_normalize_rows",
            Box::new(move |y, g, sink| {
                // dx = (g − (g·y) y) / ‖x‖ per row; zero rows get zero grad
                let mut ga = vec![F::zero(); r * c];
                for i in 0..r {
                    if norms[i].as_f64() < NORM_FLOOR {
                        continue;
                    }
                    let ys = &y[i * c..(i + 1) * c];
                    let gs = &g[i * c..(i + 1) * c];
                    let dot: F = ys.iter().zip(gs).map(|(yi, gi)| *yi * *gi).sum();
                    for j in 0..c {
                        ga[i * c + j] = (gs[j] - dot * ys[j]) / norms[i];
                    }
                }
                sink.add(&a, &ga);
            }),
        )
    }

    /// Cosine similarity of two vectors of equal length (any 1-row/1-col
    /// orientation), as a scalar node.
    pub fn cosine_similarity(u: &Tensor<F>, v: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        if u.len() != v.len() || u.is_empty() {
            return Err(shape_err(
                "cosine_similarity",
                format!("{:?} vs {:?}", u.shape(), v.shape()),
            ));
        }
        let (uv, vv) = (u.value_vec(), v.value_vec());
        let dot: F = uv.iter().zip(&vv).map(|(a, b)| *a * *b).sum();
        let nu = uv.iter().map(|a| *a * *a).sum::<F>().sqrt();
        let nv = vv.iter().map(|a| *a * *a).sum::<F>().sqrt();
        if nu.as_f64() < NORM_FLOOR || nv.as_f64() < NORM_FLOOR {
            return Err(TensorError::DegenerateNorm {
                op: "cosine_similarity",
            });
        }
        let cos = dot / (nu * nv);
        let (ut, vt) = (u.clone(), v.clone());
        Ok(Tensor::op_node(
            1,
            1,
            vec![cos],
            vec![u.clone(), v.clone()],
            "cosine_similarity",
            Box::new(move |_, g, sink| {
                let uv = ut.value_vec();
                let vv = vt.value_vec();
                let g0 = g[0];
                let gu: Vec<F> = uv
                    .iter()
                    .zip(&vv)
                    .map(|(&ui, &vi)| g0 * (vi / (nu * nv) - cos * ui / (nu * nu)))
                    .collect();
                sink.add(&ut, &gu);
                let gv: Vec<F> = uv
                    .iter()
                    .zip(&vv)
                    .map(|(&ui, &vi)| g0 * (ui / (nu * nv) - cos * vi / (nv * nv)))
                    .collect();
                sink.add(&vt, &gv);
            }),
        ))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&self) -> Tensor<F> {
        let (r, c) = self.shape();
        let total: F = self.values().iter().cloned().sum();
        let a = self.clone();
        Tensor::op_node(
            1,
            1,
            vec![total],
            vec![self.clone()],
            "sum",
            Box::new(move |_, g, sink| {
                let ga = vec![g[0]; r * c];
                sink.add(&a, &ga);
            }),
        )
    }

    /// Mean negative log-softmax probability of `targets[i]` over the
    /// selected rows, divided by `divisor` instead of the selection count so
    /// several calls can share one global denominator.
    pub fn cross_entropy_rows(
        &self,
        targets: &[usize],
        selected: &[usize],
        divisor: F,
    ) -> Result<Tensor<F>, TensorError> {
        let (r, c) = self.shape();
        if targets.len() != r {
            return Err(shape_err(
                "cross_entropy_rows",
                format!("{} targets for {} rows", targets.len(), r),
            ));
        }
        if selected.is_empty() {
            return Err(TensorError::EmptySelection {
                op: "cross_entropy_rows",
            });
        }
        for &i in selected {
            if i >= r {
                return Err(shape_err("cross_entropy_rows", format!("row {i} of {r}")));
            }
            if targets[i] >= c {
                return Err(TensorError::IdOutOfRange {
                    id: targets[i],
                    vocab: c,
                });
            }
        }
        let v = self.values();
        let mut loss = F::zero();
        for &i in selected {
            let row = &v[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = mx + row.iter().map(|x| (*x - mx).exp()).sum::<F>().ln();
            loss = loss + (lse - row[targets[i]]);
        }
        loss = loss / divisor;
        drop(v);
        let a = self.clone();
        let targets_owned: Vec<usize> = targets.to_vec();
        let sel: Vec<usize> = selected.to_vec();
        Ok(Tensor::op_node(
            1,
            1,
            vec![loss],
            vec![self.clone()],
            "cross_entropy_rows",
            Box::new(move |_, g, sink| {
                let av = a.value_vec();
                let mut ga = vec![F::zero(); r * c];
                let g0 = g[0] / divisor;
                for &i in &sel {
                    let row = &av[i * c..(i + 1) * c];
                    let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
                    let sum: F = row.iter().map(|x| (*x - mx).exp()).sum();
                    for j in 0..c {
                        let p = (row[j] - mx).exp() / sum;
                        let ind = if j == targets_owned[i] { F::one() } else { F::zero() };
                        ga[i * c + j] = g0 * (p - ind);
                    }
                }
                sink.add(&a, &ga);
            }),
        ))
    }

    // ---- backward ----

    /// Reverse-mode gradient of a scalar loss. Gradients of every reachable
    /// node are accumulated into its `grad` buffer; calling twice without
    /// zeroing doubles them.
    pub fn backward(&self) -> Result<(), TensorError> {
        let (r, c) = self.shape();
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows: r, cols: c });
        }
        // Iterative post-order DFS: parents first, root last.
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<F>, usize)> = vec![(self.clone(), 0)];
        while let Some((node, child_idx)) = stack.pop() {
            let id = node.node_id();
            if child_idx == 0 && visited.contains_key(&id) {
                continue;
            }
            let n_parents = node.0.borrow().parents.len();
            if child_idx < n_parents {
                let parent = node.0.borrow().parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if !visited.contains_key(&parent.node_id()) {
                    stack.push((parent, 0));
                }
            } else {
                visited.insert(id, ());
                order.push(node);
            }
        }

        let mut sink = GradSink::new();
        sink.add(self, &[F::one()]);
        for node in order.iter().rev() {
            let pending = match sink.take(node.node_id()) {
                Some(p) => p,
                None => continue,
            };
            {
                let borrowed = node.0.borrow();
                if let Some(bw) = &borrowed.backward {
                    bw(&borrowed.values, &pending, &mut sink);
                }
            }
            node.add_into_grad(&pending);
        }
        Ok(())
    }
}

/// Named collection of parameter tensors, iterated in name order.
pub struct ParamSet<F: Scalar> {
    map: std::collections::BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> Clone for ParamSet<F> {
    /// Shallow: the clone shares the underlying tensors.
    fn clone(&self) -> Self {
        ParamSet {
            map: self.map.clone(),
        }
    }
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            map: std::collections::BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.map.values() {
            t.zero_grad();
        }
    }

    /// Deep copy with detached tensors.
    pub fn detached(&self) -> ParamSet<F> {
        let mut out = ParamSet::new();
        for (k, v) in &self.map {
            out.insert(k.clone(), v.detached());
        }
        out
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for (k, v) in &self.map {
            out.insert(k.clone(), v.cast::<G>());
        }
        out
    }
}

#[cfg(test)]
mod tests;
