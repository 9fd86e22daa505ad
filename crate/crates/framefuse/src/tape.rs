//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive as a node holding its forward
//! value plus a vector-Jacobian-product closure. Node creation order is
//! a topological order of the graph, so [`Tape::backward`] propagates
//! gradients in one reverse sweep, visiting each node exactly once and
//! accumulating (never overwriting) into parent slots. Gradients always
//! have the same shape as the value they belong to.
//!
//! Vectors are represented as single-column or single-row matrices;
//! ops that require a vector accept either orientation.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Exponent clamp for sigmoid/softmax inputs. Keeps outputs strictly
/// inside (0, 1) and gradients finite.
pub const EXP_CLAMP: f64 = 30.0;

/// Norm threshold below which L2 normalization is refused.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
}

type BackwardFn = Box<dyn Fn(&[Node], &Matrix, &mut GradSlots)>;

struct Node {
    value: Matrix,
    backward: Option<BackwardFn>,
}

/// Per-node gradient accumulator used during the backward sweep.
pub struct GradSlots {
    slots: Vec<Option<Matrix>>,
}

impl GradSlots {
    fn accumulate(&mut self, idx: usize, g: Matrix) {
        match &mut self.slots[idx] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients {
    slots: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`, if it participated in the computation.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.slots[v.idx].as_ref()
    }

    /// Gradient for `v`, or zeros of the given shape when `v` did not
    /// influence the output.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

/// Recording tape for one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a node (cloned; values are small at desk scale).
    pub fn value(&self, v: Var) -> Matrix {
        self.nodes.borrow()[v.idx].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[v.idx].value.rows(), nodes[v.idx].value.cols())
    }

    fn shape_string(&self, v: Var) -> String {
        self.nodes.borrow()[v.idx].value.shape_string()
    }

    fn push(&self, value: Matrix, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, backward });
        Var { idx: nodes.len() - 1 }
    }

    /// Leaf node whose gradient will be read back (a trainable value).
    pub fn param(&self, value: Matrix) -> Var {
        self.push(value, None)
    }

    /// Leaf node treated as fixed input; mechanically identical to
    /// [`Tape::param`], the distinction is what the caller reads back.
    pub fn constant(&self, value: Matrix) -> Var {
        self.push(value, None)
    }

    /// Scalar constant as a 1x1 node.
    pub fn scalar_constant(&self, value: f64) -> Var {
        self.constant(Matrix::from_raw(1, 1, vec![value]))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("add", a, b, |x, y| x + y, |_, _, g| (g.clone(), g.clone()))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("sub", a, b, |x, y| x - y, |_, _, g| (g.clone(), g.scaled(-1.0)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(
            "mul",
            a,
            b,
            |x, y| x * y,
            |av, bv, g| {
                let da = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect(),
                );
                let db = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect(),
                );
                (da, db)
            },
        )
    }

    fn elementwise_pair(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        vjp: impl Fn(&Matrix, &Matrix, &Matrix) -> (Matrix, Matrix) + 'static,
    ) -> Result<Var> {
        let (av, bv) = {
            let nodes = self.nodes.borrow();
            if nodes[a.idx].value.shape() != nodes[b.idx].value.shape() {
                return Err(Error::shape(op, self.shape_string(a), self.shape_string(b)));
            }
            (nodes[a.idx].value.clone(), nodes[b.idx].value.clone())
        };
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Matrix::from_raw(av.rows(), av.cols(), data);
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let (da, db) = vjp(&nodes[a.idx].value, &nodes[b.idx].value, g);
                slots.accumulate(a.idx, da);
                slots.accumulate(b.idx, db);
            })),
        ))
    }

    /// Multiply by a compile-time scalar.
    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.nodes.borrow()[a.idx].value.scaled(c);
        self.push(
            value,
            Some(Box::new(move |_, g, slots| {
                slots.accumulate(a.idx, g.scaled(c));
            })),
        )
    }

    /// Broadcast-multiply every entry of `a` by a 1x1 scalar node.
    pub fn mul_scalar_node(&self, a: Var, s: Var) -> Result<Var> {
        {
            let nodes = self.nodes.borrow();
            if !nodes[s.idx].value.is_scalar() {
                return Err(Error::shape("mul_scalar_node", "1x1", self.shape_string(s)));
            }
        }
        let (av, sv) = {
            let nodes = self.nodes.borrow();
            (nodes[a.idx].value.clone(), nodes[s.idx].value.scalar())
        };
        let value = av.scaled(sv);
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let s_val = nodes[s.idx].value.scalar();
                slots.accumulate(a.idx, g.scaled(s_val));
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(nodes[a.idx].value.data())
                    .map(|(g, a)| g * a)
                    .sum();
                slots.accumulate(s.idx, Matrix::from_raw(1, 1, vec![ds]));
            })),
        ))
    }

    /// Elementwise reciprocal; entries must be nonzero.
    pub fn recip(&self, a: Var) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        if av.data().contains(&0.0) {
            return Err(Error::InvalidValue {
                op: "recip",
                reason: "zero entry".into(),
            });
        }
        let out_idx = self.len();
        let value = av.map(|x| 1.0 / x);
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let y = &nodes[out_idx].value;
                let da = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(y.data()).map(|(g, y)| -g * y * y).collect(),
                );
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    // ---- activations ----------------------------------------------------

    /// Elementwise max(0, x); subgradient at 0 is 0.
    pub fn relu(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.idx].value.map(|x| x.max(0.0));
        self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let x = &nodes[a.idx].value;
                let da = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                );
                slots.accumulate(a.idx, da);
            })),
        )
    }

    /// Elementwise logistic function with inputs clamped to
    /// [-EXP_CLAMP, EXP_CLAMP], so outputs stay strictly inside (0, 1).
    pub fn sigmoid(&self, a: Var) -> Var {
        let out_idx = self.len();
        let value = self.nodes.borrow()[a.idx]
            .value
            .map(|x| 1.0 / (1.0 + (-x.clamp(-EXP_CLAMP, EXP_CLAMP)).exp()));
        self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let y = &nodes[out_idx].value;
                let da = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect(),
                );
                slots.accumulate(a.idx, da);
            })),
        )
    }

    /// Elementwise exp with inputs clamped to [-EXP_CLAMP, EXP_CLAMP].
    pub fn exp(&self, a: Var) -> Var {
        let out_idx = self.len();
        let value = self.nodes.borrow()[a.idx]
            .value
            .map(|x| x.clamp(-EXP_CLAMP, EXP_CLAMP).exp());
        self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let y = &nodes[out_idx].value;
                let da = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(y.data()).map(|(g, y)| g * y).collect(),
                );
                slots.accumulate(a.idx, da);
            })),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out_idx = self.len();
        let value = self.nodes.borrow()[a.idx].value.map(f64::tanh);
        self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let y = &nodes[out_idx].value;
                let da = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect(),
                );
                slots.accumulate(a.idx, da);
            })),
        )
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.idx].value.matmul(&nodes[b.idx].value)?
        };
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let av = &nodes[a.idx].value;
                let bv = &nodes[b.idx].value;
                let da = g.matmul(&bv.transpose()).expect("vjp shape");
                let db = av.transpose().matmul(g).expect("vjp shape");
                slots.accumulate(a.idx, da);
                slots.accumulate(b.idx, db);
            })),
        ))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = self.nodes.borrow()[a.idx].value.transpose();
        self.push(
            value,
            Some(Box::new(move |_, g, slots| {
                slots.accumulate(a.idx, g.transpose());
            })),
        )
    }

    /// Column-vector affine map `W x + b`.
    pub fn affine(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        {
            let nodes = self.nodes.borrow();
            let xs = nodes[x.idx].value.shape();
            let ws = nodes[w.idx].value.shape();
            let bs = nodes[b.idx].value.shape();
            if xs.1 != 1 || ws.1 != xs.0 {
                return Err(Error::shape(
                    "affine",
                    format!("W {}x{} * x {}x1", ws.0, xs.0, xs.0),
                    format!("W {}x{} * x {}x{}", ws.0, ws.1, xs.0, xs.1),
                ));
            }
            if bs != (ws.0, 1) {
                return Err(Error::shape("affine", format!("b {}x1", ws.0), format!("b {}x{}", bs.0, bs.1)));
            }
        }
        let wx = self.matmul(w, x)?;
        self.add(wx, b)
    }

    /// Adds a 1xC row to every row of an NxC matrix.
    pub fn add_broadcast_row(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = {
            let nodes = self.nodes.borrow();
            (nodes[a.idx].value.clone(), nodes[b.idx].value.clone())
        };
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape(
                "add_broadcast_row",
                format!("1x{}", av.cols()),
                bv.shape_string(),
            ));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let row = &mut out.data_mut()[r * bv.cols()..(r + 1) * bv.cols()];
            for (o, add) in row.iter_mut().zip(bv.data()) {
                *o += add;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |_, g, slots| {
                slots.accumulate(a.idx, g.clone());
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (acc, v) in db.iter_mut().zip(g.row_slice(r)) {
                        *acc += v;
                    }
                }
                slots.accumulate(b.idx, Matrix::from_raw(1, cols, db));
            })),
        ))
    }

    // ---- row/column structure ----------------------------------------------

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let (cols, splits, data) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].idx].value.cols();
            let mut splits = Vec::with_capacity(parts.len());
            let mut data = Vec::new();
            for p in parts {
                let v = &nodes[p.idx].value;
                if v.cols() != cols {
                    return Err(Error::shape(
                        "concat_rows",
                        format!("Nx{cols}"),
                        v.shape_string(),
                    ));
                }
                splits.push(v.rows());
                data.extend_from_slice(v.data());
            }
            (cols, splits, data)
        };
        let rows = splits.iter().sum();
        let parts: Vec<Var> = parts.to_vec();
        Ok(self.push(
            Matrix::from_raw(rows, cols, data),
            Some(Box::new(move |_, g, slots| {
                let mut offset = 0;
                for (p, n) in parts.iter().zip(&splits) {
                    let chunk = g.data()[offset * cols..(offset + n) * cols].to_vec();
                    slots.accumulate(p.idx, Matrix::from_raw(*n, cols, chunk));
                    offset += n;
                }
            })),
        ))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let (rows, widths) = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].idx].value.rows();
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let v = &nodes[p.idx].value;
                if v.rows() != rows {
                    return Err(Error::shape("concat_cols", format!("{rows}xC"), v.shape_string()));
                }
                widths.push(v.cols());
            }
            (rows, widths)
        };
        let cols: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * cols];
        {
            let nodes = self.nodes.borrow();
            let mut offset = 0;
            for (p, w) in parts.iter().zip(&widths) {
                let v = &nodes[p.idx].value;
                for r in 0..rows {
                    data[r * cols + offset..r * cols + offset + w].copy_from_slice(v.row_slice(r));
                }
                offset += w;
            }
        }
        let parts: Vec<Var> = parts.to_vec();
        Ok(self.push(
            Matrix::from_raw(rows, cols, data),
            Some(Box::new(move |_, g, slots| {
                let mut offset = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    let mut part = vec![0.0; rows * w];
                    for r in 0..rows {
                        part[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data()[r * cols + offset..r * cols + offset + w]);
                    }
                    slots.accumulate(p.idx, Matrix::from_raw(rows, *w, part));
                    offset += w;
                }
            })),
        ))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols, data) = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.idx].value;
            if start + len > v.rows() {
                return Err(Error::shape(
                    "slice_rows",
                    format!("rows {}..{} of {}", start, start + len, v.shape_string()),
                    v.shape_string(),
                ));
            }
            (v.rows(), v.cols(), v.data()[start * v.cols()..(start + len) * v.cols()].to_vec())
        };
        Ok(self.push(
            Matrix::from_raw(len, cols, data),
            Some(Box::new(move |_, g, slots| {
                let mut da = Matrix::zeros(rows, cols);
                da.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    pub fn slice_row(&self, a: Var, row: usize) -> Result<Var> {
        self.slice_rows(a, row, 1)
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {}..{} of {}x{}", start, start + len, rows, cols),
                format!("{rows}x{cols}"),
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.idx].value;
            let mut data = vec![0.0; rows * len];
            for r in 0..rows {
                data[r * len..(r + 1) * len]
                    .copy_from_slice(&v.data()[r * cols + start..r * cols + start + len]);
            }
            Matrix::from_raw(rows, len, data)
        };
        Ok(self.push(
            value,
            Some(Box::new(move |_, g, slots| {
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    da.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    /// Repeats a 1xC row n times into an nxC matrix.
    pub fn repeat_row(&self, a: Var, n: usize) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        if av.rows() != 1 {
            return Err(Error::shape("repeat_row", "1xC", av.shape_string()));
        }
        let cols = av.cols();
        let mut data = Vec::with_capacity(n * cols);
        for _ in 0..n {
            data.extend_from_slice(av.data());
        }
        Ok(self.push(
            Matrix::from_raw(n, cols, data),
            Some(Box::new(move |_, g, slots| {
                let mut da = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (acc, v) in da.iter_mut().zip(g.row_slice(r)) {
                        *acc += v;
                    }
                }
                slots.accumulate(a.idx, Matrix::from_raw(1, cols, da));
            })),
        ))
    }

    /// Zeroes the rows whose mask entry is false.
    pub fn mask_rows(&self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        if mask.len() != av.rows() {
            return Err(Error::shape(
                "mask_rows",
                format!("mask of length {}", av.rows()),
                format!("mask of length {}", mask.len()),
            ));
        }
        let cols = av.cols();
        let mut out = av;
        for (r, keep) in mask.iter().enumerate() {
            if !keep {
                out.data_mut()[r * cols..(r + 1) * cols].fill(0.0);
            }
        }
        let mask = mask.to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |_, g, slots| {
                let mut da = g.clone();
                for (r, keep) in mask.iter().enumerate() {
                    if !keep {
                        da.data_mut()[r * cols..(r + 1) * cols].fill(0.0);
                    }
                }
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    /// Assembles a matrix from 1x1 scalar nodes in row-major order.
    pub fn stack_scalars(&self, rows: usize, cols: usize, items: &[Var]) -> Result<Var> {
        if items.len() != rows * cols {
            return Err(Error::shape(
                "stack_scalars",
                format!("{rows}x{cols} ({} scalars)", rows * cols),
                format!("{} scalars", items.len()),
            ));
        }
        let data = {
            let nodes = self.nodes.borrow();
            items
                .iter()
                .map(|v| {
                    let m = &nodes[v.idx].value;
                    if !m.is_scalar() {
                        return Err(Error::shape("stack_scalars", "1x1", m.shape_string()));
                    }
                    Ok(m.scalar())
                })
                .collect::<Result<Vec<f64>>>()?
        };
        let items: Vec<Var> = items.to_vec();
        Ok(self.push(
            Matrix::from_raw(rows, cols, data),
            Some(Box::new(move |_, g, slots| {
                for (k, item) in items.iter().enumerate() {
                    slots.accumulate(item.idx, Matrix::from_raw(1, 1, vec![g.data()[k]]));
                }
            })),
        ))
    }

    // ---- reductions -------------------------------------------------------

    /// Per-row channel mean: NxC -> Nx1.
    pub fn row_means(&self, a: Var) -> Var {
        let av = self.nodes.borrow()[a.idx].value.clone();
        let (rows, cols) = av.shape();
        let data = (0..rows)
            .map(|r| av.row_slice(r).iter().sum::<f64>() / cols as f64)
            .collect();
        self.push(
            Matrix::from_raw(rows, 1, data),
            Some(Box::new(move |_, g, slots| {
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.data()[r] / cols as f64;
                    da.data_mut()[r * cols..(r + 1) * cols].fill(gr);
                }
                slots.accumulate(a.idx, da);
            })),
        )
    }

    /// Mean over masked-in rows: NxC -> 1xC. Errors on an empty mask.
    pub fn masked_mean_rows(&self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        let (rows, cols) = av.shape();
        if mask.len() != rows {
            return Err(Error::shape(
                "masked_mean_rows",
                format!("mask of length {rows}"),
                format!("mask of length {}", mask.len()),
            ));
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let mut out = vec![0.0; cols];
        for (r, keep) in mask.iter().enumerate() {
            if *keep {
                for (acc, v) in out.iter_mut().zip(av.row_slice(r)) {
                    *acc += v;
                }
            }
        }
        for v in &mut out {
            *v /= count as f64;
        }
        let mask = mask.to_vec();
        Ok(self.push(
            Matrix::from_raw(1, cols, out),
            Some(Box::new(move |_, g, slots| {
                let mut da = Matrix::zeros(rows, cols);
                for (r, keep) in mask.iter().enumerate() {
                    if *keep {
                        for (slot, gv) in da.data_mut()[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(g.data())
                        {
                            *slot = gv / count as f64;
                        }
                    }
                }
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    /// Mean of all entries -> 1x1.
    pub fn mean_all(&self, a: Var) -> Var {
        let av = self.nodes.borrow()[a.idx].value.clone();
        let (rows, cols) = av.shape();
        let n = (rows * cols) as f64;
        let mean = av.data().iter().sum::<f64>() / n;
        self.push(
            Matrix::from_raw(1, 1, vec![mean]),
            Some(Box::new(move |_, g, slots| {
                let gv = g.scalar() / n;
                slots.accumulate(a.idx, Matrix::from_raw(rows, cols, vec![gv; rows * cols]));
            })),
        )
    }

    /// Sum of all entries -> 1x1.
    pub fn sum_all(&self, a: Var) -> Var {
        let av = self.nodes.borrow()[a.idx].value.clone();
        let (rows, cols) = av.shape();
        let sum = av.data().iter().sum::<f64>();
        self.push(
            Matrix::from_raw(1, 1, vec![sum]),
            Some(Box::new(move |_, g, slots| {
                let gv = g.scalar();
                slots.accumulate(a.idx, Matrix::from_raw(rows, cols, vec![gv; rows * cols]));
            })),
        )
    }

    /// Main diagonal of a square matrix -> Bx1.
    pub fn diag(&self, a: Var) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        let (rows, cols) = av.shape();
        if rows != cols {
            return Err(Error::shape("diag", "square matrix", av.shape_string()));
        }
        let data = (0..rows).map(|i| av.get(i, i)).collect();
        Ok(self.push(
            Matrix::from_raw(rows, 1, data),
            Some(Box::new(move |_, g, slots| {
                let mut da = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    da.set(i, i, g.data()[i]);
                }
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    /// Dot product of two equal-length vector-shaped nodes -> 1x1.
    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = {
            let nodes = self.nodes.borrow();
            (nodes[a.idx].value.clone(), nodes[b.idx].value.clone())
        };
        if !av.is_vector_shaped() || !bv.is_vector_shaped() || av.data().len() != bv.data().len() {
            return Err(Error::shape(
                "dot",
                format!("vectors of equal length {}", av.data().len()),
                format!("{} . {}", av.shape_string(), bv.shape_string()),
            ));
        }
        let value: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(
            Matrix::from_raw(1, 1, vec![value]),
            Some(Box::new(move |nodes, g, slots| {
                let gv = g.scalar();
                let av = &nodes[a.idx].value;
                let bv = &nodes[b.idx].value;
                let da = Matrix::from_raw(av.rows(), av.cols(), bv.data().iter().map(|x| gv * x).collect());
                let db = Matrix::from_raw(bv.rows(), bv.cols(), av.data().iter().map(|x| gv * x).collect());
                slots.accumulate(a.idx, da);
                slots.accumulate(b.idx, db);
            })),
        ))
    }

    /// Stable per-row log-sum-exp: RxC -> Rx1.
    pub fn logsumexp_rows(&self, a: Var) -> Var {
        let av = self.nodes.borrow()[a.idx].value.clone();
        let (rows, cols) = av.shape();
        let out_idx = self.len();
        let data: Vec<f64> = (0..rows)
            .map(|r| {
                let row = av.row_slice(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
            })
            .collect();
        self.push(
            Matrix::from_raw(rows, 1, data),
            Some(Box::new(move |nodes, g, slots| {
                let x = &nodes[a.idx].value;
                let lse = &nodes[out_idx].value;
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.data()[r];
                    let l = lse.data()[r];
                    for c in 0..cols {
                        da.set(r, c, gr * (x.get(r, c) - l).exp());
                    }
                }
                slots.accumulate(a.idx, da);
            })),
        )
    }

    // ---- softmax / normalization -------------------------------------------

    /// Max-subtracted softmax over all entries of a vector-shaped node.
    pub fn softmax_vec(&self, a: Var) -> Result<Var> {
        let len = {
            let v = &self.nodes.borrow()[a.idx].value;
            if !v.is_vector_shaped() {
                return Err(Error::shape("softmax_vec", "1xN or Nx1", v.shape_string()));
            }
            v.data().len()
        };
        self.masked_softmax_vec(a, &vec![true; len])
    }

    /// Softmax over the masked-in entries of a vector-shaped node;
    /// masked-out entries get exactly 0. Shifted inputs are floored at
    /// -EXP_CLAMP before exponentiation, so masked-in outputs stay
    /// strictly positive.
    pub fn masked_softmax_vec(&self, a: Var, mask: &[bool]) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        if !av.is_vector_shaped() {
            return Err(Error::shape("masked_softmax_vec", "1xN or Nx1", av.shape_string()));
        }
        let n = av.data().len();
        if mask.len() != n {
            return Err(Error::shape(
                "masked_softmax_vec",
                format!("mask of length {n}"),
                format!("mask of length {}", mask.len()),
            ));
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::EmptyMask);
        }
        let out_idx = self.len();
        let probs = masked_softmax_slice(av.data(), mask);
        let mask = mask.to_vec();
        Ok(self.push(
            Matrix::from_raw(av.rows(), av.cols(), probs),
            Some(Box::new(move |nodes, g, slots| {
                let p = &nodes[out_idx].value;
                let inner: f64 = g
                    .data()
                    .iter()
                    .zip(p.data())
                    .zip(&mask)
                    .filter(|(_, m)| **m)
                    .map(|((g, p), _)| g * p)
                    .sum();
                let da = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(p.data())
                        .zip(&mask)
                        .map(|((g, p), m)| if *m { p * (g - inner) } else { 0.0 })
                        .collect(),
                );
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    /// Row-wise softmax over masked-in columns (attention weights).
    /// Each row of the output sums to 1 over the masked-in columns and
    /// is exactly 0 on masked-out columns.
    pub fn masked_softmax_rows(&self, a: Var, key_mask: &[bool]) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        let (rows, cols) = av.shape();
        if key_mask.len() != cols {
            return Err(Error::shape(
                "masked_softmax_rows",
                format!("mask of length {cols}"),
                format!("mask of length {}", key_mask.len()),
            ));
        }
        if !key_mask.iter().any(|m| *m) {
            return Err(Error::EmptyMask);
        }
        let out_idx = self.len();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let probs = masked_softmax_slice(av.row_slice(r), key_mask);
            data[r * cols..(r + 1) * cols].copy_from_slice(&probs);
        }
        let mask = key_mask.to_vec();
        Ok(self.push(
            Matrix::from_raw(rows, cols, data),
            Some(Box::new(move |nodes, g, slots| {
                let p = &nodes[out_idx].value;
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.row_slice(r);
                    let pr = p.row_slice(r);
                    let inner: f64 = gr
                        .iter()
                        .zip(pr)
                        .zip(&mask)
                        .filter(|(_, m)| **m)
                        .map(|((g, p), _)| g * p)
                        .sum();
                    for c in 0..cols {
                        if mask[c] {
                            da.set(r, c, pr[c] * (gr[c] - inner));
                        }
                    }
                }
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    /// L2 normalization of a vector-shaped node.
    pub fn l2_normalize(&self, a: Var) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        if !av.is_vector_shaped() {
            return Err(Error::shape("l2_normalize", "1xN or Nx1", av.shape_string()));
        }
        let norm = av.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= NORM_EPS {
            return Err(Error::DegenerateVector { norm });
        }
        let out_idx = self.len();
        let value = av.scaled(1.0 / norm);
        Ok(self.push(
            value,
            Some(Box::new(move |nodes, g, slots| {
                let y = &nodes[out_idx].value;
                let proj: f64 = y.data().iter().zip(g.data()).map(|(y, g)| y * g).sum();
                let da = Matrix::from_raw(
                    g.rows(),
                    g.cols(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| (g - y * proj) / norm)
                        .collect(),
                );
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    /// Row-wise L2 normalization; errors if any row norm is near zero.
    pub fn l2_normalize_rows(&self, a: Var) -> Result<Var> {
        let av = self.nodes.borrow()[a.idx].value.clone();
        let (rows, cols) = av.shape();
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let norm = av.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= NORM_EPS {
                return Err(Error::DegenerateVector { norm });
            }
            norms.push(norm);
        }
        let out_idx = self.len();
        let mut data = Vec::with_capacity(rows * cols);
        for (r, norm) in norms.iter().enumerate() {
            data.extend(av.row_slice(r).iter().map(|x| x / norm));
        }
        Ok(self.push(
            Matrix::from_raw(rows, cols, data),
            Some(Box::new(move |nodes, g, slots| {
                let y = &nodes[out_idx].value;
                let mut da = Matrix::zeros(rows, cols);
                for (r, norm) in norms.iter().enumerate() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let proj: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..cols {
                        da.set(r, c, (gr[c] - yr[c] * proj) / norm);
                    }
                }
                slots.accumulate(a.idx, da);
            })),
        ))
    }

    /// Per-row layer normalization with learned gain/bias (1xC each).
    pub fn layer_norm_rows(&self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (av, gv, bv) = {
            let nodes = self.nodes.borrow();
            (
                nodes[a.idx].value.clone(),
                nodes[gain.idx].value.clone(),
                nodes[bias.idx].value.clone(),
            )
        };
        let (rows, cols) = av.shape();
        if gv.shape() != (1, cols) || bv.shape() != (1, cols) {
            return Err(Error::shape(
                "layer_norm_rows",
                format!("gain/bias 1x{cols}"),
                format!("gain {} bias {}", gv.shape_string(), bv.shape_string()),
            ));
        }
        // Cache normalized rows and inverse stddevs for the backward pass.
        let mut normed = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = av.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (c, x) in row.iter().enumerate() {
                let xn = (x - mean) * inv;
                normed.set(r, c, xn);
                out.set(r, c, xn * gv.data()[c] + bv.data()[c]);
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |nodes, g, slots| {
                let gamma = &nodes[gain.idx].value;
                let mut da = Matrix::zeros(rows, cols);
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = g.row_slice(r);
                    let xn = normed.row_slice(r);
                    let mut dxn = vec![0.0; cols];
                    for c in 0..cols {
                        dgain[c] += gr[c] * xn[c];
                        dbias[c] += gr[c];
                        dxn[c] = gr[c] * gamma.data()[c];
                    }
                    let mean_dxn = dxn.iter().sum::<f64>() / cols as f64;
                    let mean_dxn_xn = dxn.iter().zip(xn).map(|(d, x)| d * x).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        da.set(r, c, inv * (dxn[c] - mean_dxn - xn[c] * mean_dxn_xn));
                    }
                }
                slots.accumulate(a.idx, da);
                slots.accumulate(gain.idx, Matrix::from_raw(1, cols, dgain));
                slots.accumulate(bias.idx, Matrix::from_raw(1, cols, dbias));
            })),
        ))
    }

    // ---- frame-weighting primitives ----------------------------------------

    /// Scales row i of an NxC matrix by the i-th entry of an Nx1 weight
    /// column.
    pub fn scale_rows(&self, v: Var, z: Var) -> Result<Var> {
        let (vv, zv) = {
            let nodes = self.nodes.borrow();
            (nodes[v.idx].value.clone(), nodes[z.idx].value.clone())
        };
        let (rows, cols) = vv.shape();
        if zv.shape() != (rows, 1) {
            return Err(Error::shape("scale_rows", format!("{rows}x1"), zv.shape_string()));
        }
        let mut out = vv.clone();
        for r in 0..rows {
            let w = zv.data()[r];
            for x in &mut out.data_mut()[r * cols..(r + 1) * cols] {
                *x *= w;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |nodes, g, slots| {
                let vv = &nodes[v.idx].value;
                let zv = &nodes[z.idx].value;
                let mut dv = Matrix::zeros(rows, cols);
                let mut dz = Matrix::zeros(rows, 1);
                for r in 0..rows {
                    let w = zv.data()[r];
                    let gr = g.row_slice(r);
                    let vr = vv.row_slice(r);
                    let mut acc = 0.0;
                    for (c, (gc, vc)) in gr.iter().zip(vr).enumerate() {
                        dv.set(r, c, w * gc);
                        acc += gc * vc;
                    }
                    dz.set(r, 0, acc);
                }
                slots.accumulate(v.idx, dv);
                slots.accumulate(z.idx, dz);
            })),
        ))
    }

    /// Weighted sum of rows: sum_i z_i * v_i -> 1xC.
    pub fn weighted_sum_rows(&self, v: Var, z: Var) -> Result<Var> {
        let (vv, zv) = {
            let nodes = self.nodes.borrow();
            (nodes[v.idx].value.clone(), nodes[z.idx].value.clone())
        };
        let (rows, cols) = vv.shape();
        if zv.shape() != (rows, 1) {
            return Err(Error::shape("weighted_sum_rows", format!("{rows}x1"), zv.shape_string()));
        }
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            let w = zv.data()[r];
            for (acc, x) in out.iter_mut().zip(vv.row_slice(r)) {
                *acc += w * x;
            }
        }
        Ok(self.push(
            Matrix::from_raw(1, cols, out),
            Some(Box::new(move |nodes, g, slots| {
                let vv = &nodes[v.idx].value;
                let zv = &nodes[z.idx].value;
                let mut dv = Matrix::zeros(rows, cols);
                let mut dz = Matrix::zeros(rows, 1);
                for r in 0..rows {
                    let w = zv.data()[r];
                    let vr = vv.row_slice(r);
                    let mut acc = 0.0;
                    for (c, (gc, vc)) in g.data().iter().zip(vr).enumerate() {
                        dv.set(r, c, w * gc);
                        acc += gc * vc;
                    }
                    dz.set(r, 0, acc);
                }
                slots.accumulate(v.idx, dv);
                slots.accumulate(z.idx, dz);
            })),
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Backpropagates from a scalar node. Nodes are visited once each,
    /// in reverse creation order (a reverse topological order by
    /// construction); parent contributions accumulate.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        {
            let v = &nodes[loss.idx].value;
            if !v.is_scalar() {
                return Err(Error::shape("backward", "1x1 scalar", v.shape_string()));
            }
        }
        let mut slots = GradSlots {
            slots: (0..nodes.len()).map(|_| None).collect(),
        };
        slots.slots[loss.idx] = Some(Matrix::from_raw(1, 1, vec![1.0]));
        for i in (0..=loss.idx).rev() {
            let Some(backward) = &nodes[i].backward else {
                continue;
            };
            let Some(g) = slots.slots[i].clone() else {
                continue;
            };
            backward(&nodes, &g, &mut slots);
        }
        Ok(Gradients { slots: slots.slots })
    }
}

/// Masked, max-subtracted softmax with the shifted logits floored at
/// -EXP_CLAMP. Masked-out entries are exactly zero.
fn masked_softmax_slice(x: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = x
        .iter()
        .zip(mask)
        .filter(|(_, keep)| **keep)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut exps = vec![0.0; x.len()];
    let mut sum = 0.0;
    for i in 0..x.len() {
        if mask[i] {
            let e = (x[i] - m).max(-EXP_CLAMP).exp();
            exps[i] = e;
            sum += e;
        }
    }
    for e in &mut exps {
        *e /= sum;
    }
    exps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Vector;

    fn col(data: &[f64]) -> Matrix {
        Matrix::column(&Vector::from_raw(data.to_vec()))
    }

    #[test]
    fn affine_identity_passes_through() {
        let t = Tape::new();
        let x = t.constant(col(&[1.0, 2.0]));
        let w = t.constant(Matrix::identity(2));
        let b = t.constant(col(&[0.0, 0.0]));
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_matches_hand_multiply() {
        let t = Tape::new();
        let x = t.constant(col(&[1.0, 1.0]));
        let w = t.constant(Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.constant(col(&[1.0, 0.0]));
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 7.0]);
    }

    #[test]
    fn affine_zero_input_passes_bias() {
        let t = Tape::new();
        let x = t.constant(col(&[0.0, 0.0]));
        let w = t.constant(Matrix::new(2, 2, vec![9.0, -3.0, 2.0, 7.0]).unwrap());
        let b = t.constant(col(&[5.0, -5.0]));
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[5.0, -5.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let t = Tape::new();
        let x = t.constant(col(&[0.0, 0.0, 0.0]));
        let w = t.constant(Matrix::zeros(2, 2));
        let b = t.constant(col(&[0.0, 0.0]));
        let msg = t.affine(x, w, b).unwrap_err().to_string();
        assert!(msg.contains("2x2") && msg.contains("3x1"), "{msg}");
    }

    #[test]
    fn relu_examples() {
        let t = Tape::new();
        let x = t.constant(col(&[-1.0, 0.0, 2.0]));
        assert_eq!(t.value(t.relu(x)).data(), &[0.0, 0.0, 2.0]);
        let y = t.constant(col(&[3.5, -3.5]));
        assert_eq!(t.value(t.relu(y)).data(), &[3.5, 0.0]);
    }

    #[test]
    fn sigmoid_examples() {
        let t = Tape::new();
        let zeros = t.constant(col(&[0.0, 0.0, 0.0]));
        assert_eq!(t.value(t.sigmoid(zeros)).data(), &[0.5, 0.5, 0.5]);

        // Saturation: within 1e-12 of 1 but never exactly 1.
        let big = t.constant(col(&[50.0]));
        let y = t.value(t.sigmoid(big)).data()[0];
        assert!(y < 1.0);
        assert!(1.0 - y < 1e-12);

        let ln3 = t.constant(col(&[3.0f64.ln()]));
        let y = t.value(t.sigmoid(ln3)).data()[0];
        assert!((y - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_examples() {
        let t = Tape::new();
        let zeros = t.constant(col(&[0.0, 0.0, 0.0]));
        let p = t.value(t.softmax_vec(zeros).unwrap());
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let logs = t.constant(col(&[1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()]));
        let p = t.value(t.softmax_vec(logs).unwrap());
        assert!((p.data()[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((p.data()[1] - 2.0 / 6.0).abs() < 1e-12);
        assert!((p.data()[2] - 3.0 / 6.0).abs() < 1e-12);

        // Shift invariance.
        let a = t.constant(col(&[0.3, -1.2, 2.0]));
        let b = t.constant(col(&[0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5]));
        let pa = t.value(t.softmax_vec(a).unwrap());
        let pb = t.value(t.softmax_vec(b).unwrap());
        assert!(pa.max_abs_diff(&pb) < 1e-12);
        assert!((pa.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_masked_out() {
        let t = Tape::new();
        let x = t.constant(col(&[5.0, 1.0, -2.0, 100.0]));
        let p = t
            .value(t.masked_softmax_vec(x, &[true, true, true, false]).unwrap());
        assert_eq!(p.data()[3], 0.0);
        assert!((p.data()[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.data()[..3].iter().all(|v| *v > 0.0));
    }

    #[test]
    fn masked_softmax_rows_are_simplexes_over_valid_keys() {
        let t = Tape::new();
        let x = t.constant(Matrix::new(2, 4, vec![0.3, -1.0, 2.0, 9.0, 0.0, 0.5, -0.5, 9.0]).unwrap());
        let p = t
            .value(t.masked_softmax_rows(x, &[true, true, true, false]).unwrap());
        for r in 0..2 {
            let row = p.row_slice(r);
            assert_eq!(row[3], 0.0);
            assert!((row[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[..3].iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn l2_normalize_examples() {
        let t = Tape::new();
        let v = t.constant(col(&[3.0, 4.0]));
        let u = t.value(t.l2_normalize(v).unwrap());
        assert!((u.data()[0] - 0.6).abs() < 1e-15);
        assert!((u.data()[1] - 0.8).abs() < 1e-15);

        let unit = t.constant(col(&[1.0, 0.0]));
        let u = t.value(t.l2_normalize(unit).unwrap());
        assert_eq!(u.data(), &[1.0, 0.0]);

        let zero = t.constant(col(&[0.0, 0.0]));
        assert!(matches!(
            t.l2_normalize(zero),
            Err(Error::DegenerateVector { .. })
        ));
    }

    #[test]
    fn diamond_graph_accumulates_gradients() {
        // d/dx (x + x) = 2
        let t = Tape::new();
        let x = t.param(Matrix::from_raw(1, 1, vec![3.0]));
        let y = t.add(x, x).unwrap();
        let grads = t.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar(), 2.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn matmul_gradients_match_hand_derivation() {
        // f = sum(W x), df/dW = 1 xT, df/dx = WT 1
        let t = Tape::new();
        let w = t.param(Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let x = t.param(col(&[5.0, 6.0]));
        let y = t.matmul(w, x).unwrap();
        let loss = t.sum_all(y);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn unused_param_has_no_gradient() {
        let t = Tape::new();
        let used = t.param(Matrix::from_raw(1, 1, vec![2.0]));
        let unused = t.param(Matrix::from_raw(1, 1, vec![7.0]));
        let loss = t.mul(used, used).unwrap();
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads.get(used).unwrap().scalar(), 4.0);
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused, 1, 1).scalar(), 0.0);
    }
}
