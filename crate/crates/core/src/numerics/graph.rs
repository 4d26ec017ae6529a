//! Reverse-mode automatic differentiation on an explicit tape.
//!
//! A `Graph` is built per forward pass: every operation appends a node
//! holding its output values and a backward closure. `backward` walks the
//! tape in reverse, accumulating vector-Jacobian products into per-node
//! gradient buffers. Nodes are immutable once pushed; parents always have
//! lower ids, so a single reverse sweep is a valid topological order.

use super::rng::RngState;
use super::NumericsError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&Graph, &[f64], &mut GradSink)>;

pub(crate) struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    back: Option<BackFn>,
}

/// Gradient buffers for every node, indexed by `Var`.
pub struct GradSink {
    bufs: Vec<Vec<f64>>,
    touched: Vec<bool>,
}

impl GradSink {
    fn new(nodes: &[Node]) -> Self {
        GradSink {
            bufs: nodes.iter().map(|n| vec![0.0; n.values.len()]).collect(),
            touched: vec![false; nodes.len()],
        }
    }

    /// Mutable gradient buffer of a parent node; marks it reachable.
    pub fn buf_mut(&mut self, parent: usize) -> &mut [f64] {
        self.touched[parent] = true;
        &mut self.bufs[parent]
    }

    pub fn add_slice(&mut self, parent: usize, delta: &[f64]) {
        let buf = self.buf_mut(parent);
        for (b, d) in buf.iter_mut().zip(delta) {
            *b += d;
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if self.touched[v.0] {
            Some(&self.bufs[v.0])
        } else {
            None
        }
    }
}

/// One reverse-mode tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims_err(op: &str, detail: String) -> NumericsError {
    NumericsError::DimMismatch {
        op: op.to_string(),
        detail,
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].values.len(), 1);
        self.nodes[v.0].values[0]
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, back: Option<BackFn>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            shape,
            values,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_node(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        back: Option<BackFn>,
    ) -> Var {
        self.push(shape, values, back)
    }

    /// Runs the reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<GradSink, NumericsError> {
        if self.nodes[root.0].values.len() != 1 {
            return Err(NumericsError::InvalidShape(
                "backward root must be a scalar".into(),
            ));
        }
        let mut sink = GradSink::new(&self.nodes);
        sink.bufs[root.0][0] = 1.0;
        sink.touched[root.0] = true;
        for id in (0..=root.0).rev() {
            if !sink.touched[id] {
                continue;
            }
            if let Some(back) = &self.nodes[id].back {
                let upstream = std::mem::take(&mut sink.bufs[id]);
                back(self, &upstream, &mut sink);
                sink.bufs[id] = upstream;
            }
        }
        Ok(sink)
    }

    // ── Leaves ──────────────────────────────────────────────────────

    /// Differentiable leaf (gradient is collected for it).
    pub fn leaf(&mut self, shape: &[usize], values: &[f64]) -> Result<Var, NumericsError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(NumericsError::InvalidShape(format!(
                "leaf: {} values for shape {shape:?}",
                values.len()
            )));
        }
        // Identity backward marks the leaf reachable so its grad is kept.
        Ok(self.push(shape.to_vec(), values.to_vec(), Some(Box::new(|_, _, _| {}))))
    }

    /// Non-differentiable constant.
    pub fn constant(&mut self, shape: &[usize], values: &[f64]) -> Result<Var, NumericsError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(NumericsError::InvalidShape(format!(
                "constant: {} values for shape {shape:?}",
                values.len()
            )));
        }
        Ok(self.push(shape.to_vec(), values.to_vec(), None))
    }

    // ── Element-wise ────────────────────────────────────────────────

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(dims_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let values: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |_, g, sink| {
                sink.add_slice(a.0, g);
                sink.add_slice(b.0, g);
            })),
        ))
    }

    /// Element-wise sum of several same-shaped vars, accumulated in slice
    /// order.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        let first = *vars.first().ok_or(NumericsError::EmptyInput("add_n".into()))?;
        for v in &vars[1..] {
            self.same_shape("add_n", first, *v)?;
        }
        let mut values = self.value(first).to_vec();
        for v in &vars[1..] {
            for (acc, x) in values.iter_mut().zip(self.value(*v)) {
                *acc += x;
            }
        }
        let shape = self.shape(first).to_vec();
        let parents: Vec<usize> = vars.iter().map(|v| v.0).collect();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |_, g, sink| {
                for p in &parents {
                    sink.add_slice(*p, g);
                }
            })),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        let values: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |_, g, sink| {
                sink.add_slice(a.0, g);
                let buf = sink.buf_mut(b.0);
                for (bi, gi) in buf.iter_mut().zip(g) {
                    *bi -= gi;
                }
            })),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let values: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |graph, g, sink| {
                let (av, bv) = (graph.value(a), graph.value(b));
                {
                    let buf = sink.buf_mut(a.0);
                    for i in 0..g.len() {
                        buf[i] += g[i] * bv[i];
                    }
                }
                let buf = sink.buf_mut(b.0);
                for i in 0..g.len() {
                    buf[i] += g[i] * av[i];
                }
            })),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        let values: Vec<f64> = self.value(a).iter().map(|x| c * x).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for (bi, gi) in buf.iter_mut().zip(g) {
                    *bi += c * gi;
                }
            })),
        ))
    }

    // ── Activations ─────────────────────────────────────────────────

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        let values: Vec<f64> = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        let out_holder = self.nodes.len(); // id this node will get
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |graph, g, sink| {
                let y = &graph.nodes[out_holder].values;
                let buf = sink.buf_mut(a.0);
                for i in 0..g.len() {
                    buf[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            })),
        ))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        let values: Vec<f64> = self.value(a).iter().map(|x| sigmoid_scalar(*x)).collect();
        let shape = self.shape(a).to_vec();
        let out_holder = self.nodes.len();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |graph, g, sink| {
                let y = &graph.nodes[out_holder].values;
                let buf = sink.buf_mut(a.0);
                for i in 0..g.len() {
                    buf[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            })),
        ))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let values: Vec<f64> = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |graph, g, sink| {
                let x = graph.value(a);
                let buf = sink.buf_mut(a.0);
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        buf[i] += g[i];
                    }
                }
            })),
        ))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var, NumericsError> {
        match kind {
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
            Activation::Sigmoid => self.sigmoid(a),
        }
    }

    // ── Linear algebra ──────────────────────────────────────────────

    /// `x [n,in] · w [in,out] + b [out]` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(dims_err("linear", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        let mut values = vec![0.0; n * m];
        {
            let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
            for i in 0..n {
                let out_row = &mut values[i * m..(i + 1) * m];
                out_row.copy_from_slice(bv);
                let x_row = &xv[i * k..(i + 1) * k];
                for (p, xi) in x_row.iter().enumerate() {
                    let w_row = &wv[p * m..(p + 1) * m];
                    for j in 0..m {
                        out_row[j] += xi * w_row[j];
                    }
                }
            }
        }
        Ok(self.push(
            vec![n, m],
            values,
            Some(Box::new(move |graph, g, sink| {
                let (xv, wv) = (graph.value(x), graph.value(w));
                // dx = g · wᵀ
                {
                    let buf = sink.buf_mut(x.0);
                    for i in 0..n {
                        let g_row = &g[i * m..(i + 1) * m];
                        let dx_row = &mut buf[i * k..(i + 1) * k];
                        for p in 0..k {
                            let w_row = &wv[p * m..(p + 1) * m];
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g_row[j] * w_row[j];
                            }
                            dx_row[p] += s;
                        }
                    }
                }
                // dw = xᵀ · g
                {
                    let buf = sink.buf_mut(w.0);
                    for i in 0..n {
                        let g_row = &g[i * m..(i + 1) * m];
                        let x_row = &xv[i * k..(i + 1) * k];
                        for (p, xi) in x_row.iter().enumerate() {
                            let dw_row = &mut buf[p * m..(p + 1) * m];
                            for j in 0..m {
                                dw_row[j] += xi * g_row[j];
                            }
                        }
                    }
                }
                // db = column sums of g
                let buf = sink.buf_mut(b.0);
                for i in 0..n {
                    let g_row = &g[i * m..(i + 1) * m];
                    for j in 0..m {
                        buf[j] += g_row[j];
                    }
                }
            })),
        ))
    }

    /// `a [n,k] · b [k,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ashape, bshape) = (self.shape(a), self.shape(b));
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(dims_err("matmul", format!("{ashape:?} vs {bshape:?}")));
        }
        let (n, k, m) = (ashape[0], ashape[1], bshape[1]);
        let mut values = vec![0.0; n * m];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..n {
                let out_row = &mut values[i * m..(i + 1) * m];
                let a_row = &av[i * k..(i + 1) * k];
                for (p, ai) in a_row.iter().enumerate() {
                    let b_row = &bv[p * m..(p + 1) * m];
                    for j in 0..m {
                        out_row[j] += ai * b_row[j];
                    }
                }
            }
        }
        Ok(self.push(
            vec![n, m],
            values,
            Some(Box::new(move |graph, g, sink| {
                let (av, bv) = (graph.value(a), graph.value(b));
                {
                    let buf = sink.buf_mut(a.0);
                    for i in 0..n {
                        let g_row = &g[i * m..(i + 1) * m];
                        let da_row = &mut buf[i * k..(i + 1) * k];
                        for p in 0..k {
                            let b_row = &bv[p * m..(p + 1) * m];
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g_row[j] * b_row[j];
                            }
                            da_row[p] += s;
                        }
                    }
                }
                let buf = sink.buf_mut(b.0);
                for i in 0..n {
                    let g_row = &g[i * m..(i + 1) * m];
                    let a_row = &av[i * k..(i + 1) * k];
                    for (p, ai) in a_row.iter().enumerate() {
                        let db_row = &mut buf[p * m..(p + 1) * m];
                        for j in 0..m {
                            db_row[j] += ai * g_row[j];
                        }
                    }
                }
            })),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dims_err("transpose", format!("{s:?}")));
        }
        let (n, m) = (s[0], s[1]);
        let av = self.value(a);
        let mut values = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                values[j * n + i] = av[i * m + j];
            }
        }
        Ok(self.push(
            vec![m, n],
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for j in 0..m {
                    for i in 0..n {
                        buf[i * m + j] += g[j * n + i];
                    }
                }
            })),
        ))
    }

    // ── Structural ──────────────────────────────────────────────────

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        if vars.is_empty() {
            return Err(NumericsError::EmptyInput("concat_cols".into()));
        }
        let n = self.shape(vars[0])[0];
        let mut widths = Vec::with_capacity(vars.len());
        for v in vars {
            let s = self.shape(*v);
            if s.len() != 2 || s[0] != n {
                return Err(dims_err("concat_cols", format!("{s:?} with n={n}")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut values = vec![0.0; n * total];
        let mut offset = 0;
        for (v, w) in vars.iter().zip(&widths) {
            let src = self.value(*v);
            for i in 0..n {
                values[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let parents: Vec<(usize, usize)> = vars.iter().map(|v| v.0).zip(widths).collect();
        Ok(self.push(
            vec![n, total],
            values,
            Some(Box::new(move |_, g, sink| {
                let mut offset = 0;
                for (p, w) in &parents {
                    let buf = sink.buf_mut(*p);
                    for i in 0..n {
                        let g_seg = &g[i * total + offset..i * total + offset + w];
                        let b_seg = &mut buf[i * w..(i + 1) * w];
                        for (bj, gj) in b_seg.iter_mut().zip(g_seg) {
                            *bj += gj;
                        }
                    }
                    offset += w;
                }
            })),
        ))
    }

    /// Concatenates vectors (scalars count as length-1 vectors).
    pub fn concat_vec(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        if vars.is_empty() {
            return Err(NumericsError::EmptyInput("concat_vec".into()));
        }
        let mut lens = Vec::with_capacity(vars.len());
        let mut values = Vec::new();
        for v in vars {
            let s = self.shape(*v);
            if s.len() != 1 {
                return Err(dims_err("concat_vec", format!("{s:?}")));
            }
            lens.push(s[0]);
            values.extend_from_slice(self.value(*v));
        }
        let total = values.len();
        let parents: Vec<(usize, usize)> = vars.iter().map(|v| v.0).zip(lens).collect();
        Ok(self.push(
            vec![total],
            values,
            Some(Box::new(move |_, g, sink| {
                let mut offset = 0;
                for (p, len) in &parents {
                    sink.add_slice(*p, &g[offset..offset + len]);
                    offset += len;
                }
            })),
        ))
    }

    /// Extracts row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 2 || i >= s[0] {
            return Err(dims_err("row", format!("row {i} of {s:?}")));
        }
        let m = s[1];
        let values = self.value(a)[i * m..(i + 1) * m].to_vec();
        Ok(self.push(
            vec![m],
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for (j, gj) in g.iter().enumerate() {
                    buf[i * m + j] += gj;
                }
            })),
        ))
    }

    /// Stacks equal-length vectors into a matrix.
    pub fn stack_rows(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        if vars.is_empty() {
            return Err(NumericsError::EmptyInput("stack_rows".into()));
        }
        let m = self.shape(vars[0])[0];
        let mut values = Vec::with_capacity(vars.len() * m);
        for v in vars {
            let s = self.shape(*v);
            if s.len() != 1 || s[0] != m {
                return Err(dims_err("stack_rows", format!("{s:?} with m={m}")));
            }
            values.extend_from_slice(self.value(*v));
        }
        let parents: Vec<usize> = vars.iter().map(|v| v.0).collect();
        Ok(self.push(
            vec![parents.len(), m],
            values,
            Some(Box::new(move |_, g, sink| {
                for (i, p) in parents.iter().enumerate() {
                    sink.add_slice(*p, &g[i * m..(i + 1) * m]);
                }
            })),
        ))
    }

    /// Contiguous row slice of a matrix: rows `start..start+n_rows`.
    pub fn slice_rows(&mut self, a: Var, start: usize, n_rows: usize) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 2 || start + n_rows > s[0] || n_rows == 0 {
            return Err(dims_err(
                "slice_rows",
                format!("rows {start}..{} of {s:?}", start + n_rows),
            ));
        }
        let m = s[1];
        let values = self.value(a)[start * m..(start + n_rows) * m].to_vec();
        Ok(self.push(
            vec![n_rows, m],
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for (i, gi) in g.iter().enumerate() {
                    buf[start * m + i] += gi;
                }
            })),
        ))
    }

    /// Reverses matrix rows (position n-1-i maps to i).
    pub fn reverse_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dims_err("reverse_rows", format!("{s:?}")));
        }
        let (n, m) = (s[0], s[1]);
        let av = self.value(a);
        let mut values = vec![0.0; n * m];
        for i in 0..n {
            values[i * m..(i + 1) * m].copy_from_slice(&av[(n - 1 - i) * m..(n - i) * m]);
        }
        Ok(self.push(
            vec![n, m],
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for i in 0..n {
                    let src = &g[i * m..(i + 1) * m];
                    let dst = &mut buf[(n - 1 - i) * m..(n - i) * m];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            })),
        ))
    }

    // ── Softmax family ──────────────────────────────────────────────

    /// Numerically stable softmax over a vector.
    pub fn softmax_vec(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 1 || s[0] == 0 {
            return Err(dims_err("softmax_vec", format!("{s:?}")));
        }
        let values = softmax_slice(self.value(a));
        let shape = s.to_vec();
        let out_holder = self.nodes.len();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |graph, g, sink| {
                let y = &graph.nodes[out_holder].values;
                let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let buf = sink.buf_mut(a.0);
                for i in 0..g.len() {
                    buf[i] += y[i] * (g[i] - dot);
                }
            })),
        ))
    }

    /// Row-wise stable softmax over the last axis of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dims_err("softmax_rows", format!("{s:?}")));
        }
        let (n, m) = (s[0], s[1]);
        let av = self.value(a);
        let mut values = vec![0.0; n * m];
        for i in 0..n {
            let row = softmax_slice(&av[i * m..(i + 1) * m]);
            values[i * m..(i + 1) * m].copy_from_slice(&row);
        }
        let out_holder = self.nodes.len();
        Ok(self.push(
            vec![n, m],
            values,
            Some(Box::new(move |graph, g, sink| {
                let y = &graph.nodes[out_holder].values;
                let buf = sink.buf_mut(a.0);
                for i in 0..n {
                    let y_row = &y[i * m..(i + 1) * m];
                    let g_row = &g[i * m..(i + 1) * m];
                    let dot: f64 = g_row.iter().zip(y_row).map(|(gi, yi)| gi * yi).sum();
                    let b_row = &mut buf[i * m..(i + 1) * m];
                    for j in 0..m {
                        b_row[j] += y_row[j] * (g_row[j] - dot);
                    }
                }
            })),
        ))
    }

    /// `-log softmax(logits)[target]`, numerically stabilized.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        target: usize,
    ) -> Result<Var, NumericsError> {
        let s = self.shape(logits);
        if s.len() != 1 {
            return Err(dims_err("cross_entropy", format!("{s:?}")));
        }
        if target >= s[0] {
            return Err(NumericsError::InvalidShape(format!(
                "cross_entropy target {target} out of range for {} logits",
                s[0]
            )));
        }
        let z = self.value(logits);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|zi| (zi - m).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        Ok(self.push(
            vec![1],
            vec![loss],
            Some(Box::new(move |graph, g, sink| {
                let z = graph.value(logits);
                let p = softmax_slice(z);
                let buf = sink.buf_mut(logits.0);
                for i in 0..z.len() {
                    let ind = if i == target { 1.0 } else { 0.0 };
                    buf[i] += g[0] * (p[i] - ind);
                }
            })),
        ))
    }

    // ── Reductions ─────────────────────────────────────────────────

    /// Column-wise max over rows; ties route the subgradient to the
    /// earliest position.
    pub fn max_pool_time(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dims_err("max_pool_time", format!("{s:?}")));
        }
        let (n, m) = (s[0], s[1]);
        if n == 0 {
            return Err(NumericsError::EmptyInput("max_pool_time".into()));
        }
        let av = self.value(a);
        let mut values = av[0..m].to_vec();
        let mut argmax = vec![0usize; m];
        for i in 1..n {
            for j in 0..m {
                let x = av[i * m + j];
                if x > values[j] {
                    values[j] = x;
                    argmax[j] = i;
                }
            }
        }
        Ok(self.push(
            vec![m],
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for j in 0..m {
                    buf[argmax[j] * m + j] += g[j];
                }
            })),
        ))
    }

    /// Mean of scalar vars.
    pub fn mean_scalars(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        if vars.is_empty() {
            return Err(NumericsError::EmptyInput("mean_scalars".into()));
        }
        for v in vars {
            if self.shape(*v) != [1] {
                return Err(dims_err("mean_scalars", format!("{:?}", self.shape(*v))));
            }
        }
        let n = vars.len() as f64;
        let mean = vars.iter().map(|v| self.value(*v)[0]).sum::<f64>() / n;
        let parents: Vec<usize> = vars.iter().map(|v| v.0).collect();
        Ok(self.push(
            vec![1],
            vec![mean],
            Some(Box::new(move |_, g, sink| {
                let share = g[0] / n;
                for p in &parents {
                    sink.buf_mut(*p)[0] += share;
                }
            })),
        ))
    }

    /// Row-major flatten to a vector.
    pub fn flatten(&mut self, a: Var) -> Result<Var, NumericsError> {
        let n = self.value(a).len();
        let values = self.value(a).to_vec();
        Ok(self.push(
            vec![n],
            values,
            Some(Box::new(move |_, g, sink| {
                sink.add_slice(a.0, g);
            })),
        ))
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumericsError> {
        let total: f64 = self.value(a).iter().sum();
        Ok(self.push(
            vec![1],
            vec![total],
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for b in buf.iter_mut() {
                    *b += g[0];
                }
            })),
        ))
    }

    /// Sums non-overlapping windows of `k`: `[k*o] -> [o]`.
    pub fn sum_pool_windows(&mut self, a: Var, k: usize) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 1 || k == 0 || s[0] % k != 0 {
            return Err(dims_err("sum_pool_windows", format!("{s:?} with k={k}")));
        }
        let o = s[0] / k;
        let av = self.value(a);
        let values: Vec<f64> = (0..o).map(|j| av[j * k..(j + 1) * k].iter().sum()).collect();
        Ok(self.push(
            vec![o],
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for j in 0..o {
                    for i in 0..k {
                        buf[j * k + i] += g[j];
                    }
                }
            })),
        ))
    }

    // ── Signal ops ─────────────────────────────────────────────────

    /// Circular convolution of equal-length vectors:
    /// `out[k] = Σ_i a[i]·b[(k−i) mod D]`.
    pub fn circular_convolution(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sb.len() != 1 || sa[0] != sb[0] {
            return Err(dims_err("circular_convolution", format!("{sa:?} vs {sb:?}")));
        }
        let d = sa[0];
        let (av, bv) = (self.value(a), self.value(b));
        let mut values = vec![0.0; d];
        for k in 0..d {
            let mut s = 0.0;
            for i in 0..d {
                s += av[i] * bv[(k + d - i) % d];
            }
            values[k] = s;
        }
        Ok(self.push(
            vec![d],
            values,
            Some(Box::new(move |graph, g, sink| {
                let (av, bv) = (graph.value(a), graph.value(b));
                {
                    let buf = sink.buf_mut(a.0);
                    for i in 0..d {
                        let mut s = 0.0;
                        for k in 0..d {
                            s += g[k] * bv[(k + d - i) % d];
                        }
                        buf[i] += s;
                    }
                }
                let buf = sink.buf_mut(b.0);
                for j in 0..d {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += g[k] * av[(k + d - j) % d];
                    }
                    buf[j] += s;
                }
            })),
        ))
    }

    /// Count-sketch projection with fixed hash and sign maps.
    pub fn count_sketch(
        &mut self,
        x: Var,
        hash: &[usize],
        sign: &[f64],
        out_dim: usize,
    ) -> Result<Var, NumericsError> {
        let s = self.shape(x);
        if s.len() != 1 || s[0] != hash.len() || s[0] != sign.len() {
            return Err(dims_err(
                "count_sketch",
                format!("x {s:?}, hash {}, sign {}", hash.len(), sign.len()),
            ));
        }
        let xv = self.value(x);
        let mut values = vec![0.0; out_dim];
        for i in 0..xv.len() {
            values[hash[i]] += sign[i] * xv[i];
        }
        let hash = hash.to_vec();
        let sign = sign.to_vec();
        Ok(self.push(
            vec![out_dim],
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(x.0);
                for i in 0..hash.len() {
                    buf[i] += sign[i] * g[hash[i]];
                }
            })),
        ))
    }

    /// Element-wise `sign(x)·sqrt(|x|)`; subgradient 0 at 0.
    pub fn signed_sqrt(&mut self, a: Var) -> Result<Var, NumericsError> {
        let values: Vec<f64> = self
            .value(a)
            .iter()
            .map(|x| x.signum() * x.abs().sqrt())
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |graph, g, sink| {
                let x = graph.value(a);
                let buf = sink.buf_mut(a.0);
                for i in 0..g.len() {
                    if x[i] != 0.0 {
                        buf[i] += g[i] * 0.5 / x[i].abs().sqrt();
                    }
                }
            })),
        ))
    }

    /// L2 normalization of a vector; the all-zero vector maps to itself.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 1 {
            return Err(dims_err("l2_normalize", format!("{s:?}")));
        }
        let xv = self.value(a);
        let norm = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values: Vec<f64> = if norm == 0.0 {
            xv.to_vec()
        } else {
            xv.iter().map(|v| v / norm).collect()
        };
        let out_holder = self.nodes.len();
        Ok(self.push(
            s.to_vec(),
            values,
            Some(Box::new(move |graph, g, sink| {
                if norm == 0.0 {
                    return;
                }
                let y = &graph.nodes[out_holder].values;
                let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let buf = sink.buf_mut(a.0);
                for i in 0..g.len() {
                    buf[i] += (g[i] - y[i] * dot) / norm;
                }
            })),
        ))
    }

    // ── Dropout ────────────────────────────────────────────────────

    /// Inverted dropout: in training, zero with probability `p` and scale
    /// survivors by `1/(1-p)`; in inference, identity.
    pub fn dropout(
        &mut self,
        a: Var,
        p: f64,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::InvalidConfig(format!(
                "dropout rate {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            // Identity pass-through node.
            let shape = self.shape(a).to_vec();
            let values = self.value(a).to_vec();
            return Ok(self.push(
                shape,
                values,
                Some(Box::new(move |_, g, sink| {
                    sink.add_slice(a.0, g);
                })),
            ));
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = self
            .value(a)
            .iter()
            .map(|_| if rng.flip(p) { 0.0 } else { keep_scale })
            .collect();
        let values: Vec<f64> = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(
            shape,
            values,
            Some(Box::new(move |_, g, sink| {
                let buf = sink.buf_mut(a.0);
                for i in 0..g.len() {
                    buf[i] += g[i] * mask[i];
                }
            })),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable softmax of a slice (max subtraction).
pub fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|zi| (zi - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn linear_identity_passthrough() {
        let mut g = Graph::new();
        let x = g.leaf(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = g.leaf(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = g.leaf(&[2], &[0.0, 0.0]).unwrap();
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn linear_hand_oracle() {
        // x=[1,1], W=[[1,3],[2,4]], b=[0,0] -> [3,7]
        let mut g = Graph::new();
        let x = g.leaf(&[1, 2], &[1.0, 1.0]).unwrap();
        let w = g.leaf(&[2, 2], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        let b = g.leaf(&[2], &[0.0, 0.0]).unwrap();
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), &[3.0, 7.0]);
    }

    #[test]
    fn linear_shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let x = g.leaf(&[1, 3], &[0.0; 3]).unwrap();
        let w = g.leaf(&[2, 2], &[0.0; 4]).unwrap();
        let b = g.leaf(&[2], &[0.0; 2]).unwrap();
        let err = g.linear(x, w, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn relu_and_sigmoid_points() {
        let mut g = Graph::new();
        let x = g.leaf(&[3], &[0.0, -3.0, 3.0]).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.0, 3.0]);
        let z = g.leaf(&[1], &[0.0]).unwrap();
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s), &[0.5]);
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let mut g = Graph::new();
        let x = g.leaf(&[5], &[0.0; 5]).unwrap();
        let y = g.softmax_vec(x).unwrap();
        assert_close(g.value(y), &[0.2; 5], 1e-15);

        let x2 = g.leaf(&[2], &[0.0, 3.0f64.ln()]).unwrap();
        let y2 = g.softmax_vec(x2).unwrap();
        assert_close(g.value(y2), &[0.25, 0.75], 1e-12);
    }

    #[test]
    fn softmax_shift_invariance_and_sum() {
        let mut rng = RngState::new(77);
        for _ in 0..10 {
            let vals: Vec<f64> = (0..7).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let shifted: Vec<f64> = vals.iter().map(|v| v + 13.25).collect();
            let mut g = Graph::new();
            let a = g.leaf(&[7], &vals).unwrap();
            let b = g.leaf(&[7], &shifted).unwrap();
            let sa = g.softmax_vec(a).unwrap();
            let sb = g.softmax_vec(b).unwrap();
            assert_close(g.value(sa), g.value(sb), 1e-9);
            let sum: f64 = g.value(sa).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(g.value(sa).iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn max_pool_hand_oracle_and_ties() {
        let mut g = Graph::new();
        let x = g.leaf(&[2, 2], &[1.0, 5.0, 3.0, 2.0]).unwrap();
        let y = g.max_pool_time(x).unwrap();
        assert_eq!(g.value(y), &[3.0, 5.0]);

        // Tie: subgradient goes to the earliest row.
        let t = g.leaf(&[2, 1], &[4.0, 4.0]).unwrap();
        let p = g.max_pool_time(t).unwrap();
        let sink = g.backward(p).unwrap();
        assert_eq!(sink.get(t).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn circular_convolution_oracles() {
        let mut g = Graph::new();
        // a * delta0 = a
        let a = g.leaf(&[4], &[2.0, -1.0, 0.5, 3.0]).unwrap();
        let delta = g.leaf(&[4], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = g.circular_convolution(a, delta).unwrap();
        assert_eq!(g.value(y), &[2.0, -1.0, 0.5, 3.0]);

        // [1,2] * [3,4] = [11,10]
        let p = g.leaf(&[2], &[1.0, 2.0]).unwrap();
        let q = g.leaf(&[2], &[3.0, 4.0]).unwrap();
        let c = g.circular_convolution(p, q).unwrap();
        assert_eq!(g.value(c), &[11.0, 10.0]);
    }

    #[test]
    fn circular_convolution_commutes() {
        let mut rng = RngState::new(3);
        let d = 17;
        let av: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let bv: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut g = Graph::new();
        let a = g.leaf(&[d], &av).unwrap();
        let b = g.leaf(&[d], &bv).unwrap();
        let ab = g.circular_convolution(a, b).unwrap();
        let ba = g.circular_convolution(b, a).unwrap();
        assert_close(g.value(ab), g.value(ba), 1e-9);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = RngState::new(1);
        let mut g = Graph::new();
        let x = g.leaf(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let id0 = g.dropout(x, 0.0, &mut rng, true).unwrap();
        assert_eq!(g.value(id0), &[1.0, 2.0, 3.0, 4.0]);
        let id1 = g.dropout(x, 0.9, &mut rng, false).unwrap();
        assert_eq!(g.value(id1), &[1.0, 2.0, 3.0, 4.0]);
        assert!(g.dropout(x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_monte_carlo_mean() {
        let n = 100_000;
        let mut rng = RngState::new(99);
        let mut g = Graph::new();
        let x = g.leaf(&[n], &vec![1.0; n]).unwrap();
        let y = g.dropout(x, 0.5, &mut rng, true).unwrap();
        let mean: f64 = g.value(y).iter().sum::<f64>() / n as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    }

    #[test]
    fn cross_entropy_points() {
        let mut g = Graph::new();
        let uniform = g.leaf(&[5], &[0.7; 5]).unwrap();
        let l = g.cross_entropy_logits(uniform, 2).unwrap();
        assert!((g.scalar_value(l) - 5.0f64.ln()).abs() < 1e-12);

        let hot = g.leaf(&[5], &[1000.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let l2 = g.cross_entropy_logits(hot, 0).unwrap();
        assert!(g.scalar_value(l2) < 1e-6);

        let two = g.leaf(&[2], &[0.0, 3.0f64.ln()]).unwrap();
        let l3 = g.cross_entropy_logits(two, 0).unwrap();
        assert!((g.scalar_value(l3) - 0.25f64.ln().abs()).abs() < 1e-12);

        assert!(g.cross_entropy_logits(two, 5).is_err());
    }

    #[test]
    fn count_sketch_identity_and_linearity() {
        let mut g = Graph::new();
        let hash: Vec<usize> = (0..3).collect();
        let sign = vec![1.0; 3];
        let x = g.leaf(&[3], &[1.0, -2.0, 3.0]).unwrap();
        let y = g.count_sketch(x, &hash, &sign, 3).unwrap();
        assert_eq!(g.value(y), &[1.0, -2.0, 3.0]);

        // Linearity with a random sketch.
        let mut rng = RngState::new(5);
        let d = 9;
        let out = 5;
        let hash: Vec<usize> = (0..d).map(|_| rng.below(out as u64) as usize).collect();
        let sign: Vec<f64> = (0..d)
            .map(|_| if rng.flip(0.5) { 1.0 } else { -1.0 })
            .collect();
        let av: Vec<f64> = (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let bv: Vec<f64> = (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let sum: Vec<f64> = av.iter().zip(&bv).map(|(a, b)| a + b).collect();
        let a = g.leaf(&[d], &av).unwrap();
        let b = g.leaf(&[d], &bv).unwrap();
        let s = g.leaf(&[d], &sum).unwrap();
        let pa = g.count_sketch(a, &hash, &sign, out).unwrap();
        let pb = g.count_sketch(b, &hash, &sign, out).unwrap();
        let ps = g.count_sketch(s, &hash, &sign, out).unwrap();
        let lhs: Vec<f64> = g
            .value(pa)
            .iter()
            .zip(g.value(pb))
            .map(|(x, y)| x + y)
            .collect();
        assert_close(&lhs, g.value(ps), 1e-12);
    }

    #[test]
    fn backward_through_composition() {
        // f = sum((x*2 + x)^2) has gradient 18x.
        let mut g = Graph::new();
        let x = g.leaf(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let x2 = g.scale(x, 2.0).unwrap();
        let s = g.add(x, x2).unwrap();
        let sq = g.mul(s, s).unwrap();
        let ones = g.constant(&[1, 3], &[1.0; 3]).unwrap();
        // Sum via matmul with a ones row: [1,3]x[3,1]
        let col = g.stack_rows(&[sq]).unwrap();
        let colt = g.transpose(col).unwrap();
        let total = g.matmul(ones, colt).unwrap();
        let loss_vec = g.row(total, 0).unwrap();
        let sink = g.backward(loss_vec).unwrap();
        let grad = sink.get(x).unwrap();
        assert_close(grad, &[18.0, -36.0, 9.0], 1e-12);
    }

    #[test]
    fn determinism_bitwise() {
        let run = || {
            let mut rng = RngState::new(1234);
            let mut g = Graph::new();
            let vals: Vec<f64> = (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let x = g.leaf(&[3, 4], &vals).unwrap();
            let t = g.tanh(x).unwrap();
            let d = g.dropout(t, 0.3, &mut rng, true).unwrap();
            let p = g.max_pool_time(d).unwrap();
            let sm = g.softmax_vec(p).unwrap();
            g.value(sm).to_vec()
        };
        assert_eq!(run(), run());
    }
}
