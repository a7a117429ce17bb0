use super::{Node, ParamId, Var};

/// Recorded operation. Inputs are node ids; saved data is whatever the
/// backward rule needs beyond input and output values.
pub(crate) enum Op {
    Leaf { param: Option<ParamId> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    MulScalar(usize, usize),
    MulConst(usize, Vec<f64>),
    ScaleRows(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Relu(usize),
    Elu(usize),
    Softmax { x: usize, axis: usize },
    Conv1d { x: usize, w: usize, b: usize },
    MaxPool { x: usize, argmax: Vec<usize> },
    MeanRows(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols { x: usize, start: usize },
    GatherRows { table: usize, idx: Vec<usize> },
    ScatterRows { sel: usize, fill: usize, idx: Vec<usize> },
    FloorSte(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Sum(usize),
    Mean(usize),
    CrossEntropy { logits: usize, label: usize, probs: Vec<f64> },
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn dims2(shape: &[usize], op: &str) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "{op}: expected a matrix, got shape {shape:?}");
    (shape[0], shape[1])
}

/// Outer/inner/stride decomposition of `shape` around `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    fn unary(
        self,
        name: &'static str,
        op: impl FnOnce(usize) -> Op,
        f: impl Fn(f64) -> f64,
    ) -> Var<'t> {
        let (shape, out) = self.with_value(|s, v| (s.to_vec(), v.iter().map(|&x| f(x)).collect()));
        self.tape.push(shape, out, op(self.id), self.needs_grad(), name)
    }

    fn binary_same(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Var<'t> {
        self.same_tape(&other);
        let (shape, a) = self.with_value(|s, v| (s.to_vec(), v.to_vec()));
        let out = other.with_value(|s, b| {
            assert_eq!(shape.as_slice(), s, "{name}: shape mismatch {shape:?} vs {s:?}");
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        });
        let ng = self.needs_grad() || other.needs_grad();
        self.tape.push(shape, out, op, ng, name)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary_same(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary_same(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary_same(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// `[r, c] + [c]`: adds a bias vector to every row.
    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        self.same_tape(&bias);
        let (shape, a) = self.with_value(|s, v| (s.to_vec(), v.to_vec()));
        let (_, c) = dims2(&shape, "add_row");
        let out = bias.with_value(|bs, b| {
            assert_eq!(b.len(), c, "add_row: bias shape {bs:?} vs matrix {shape:?}");
            a.chunks(c)
                .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
                .collect()
        });
        let ng = self.needs_grad() || bias.needs_grad();
        self.tape
            .push(shape, out, Op::AddRow(self.id, bias.id), ng, "add_row")
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary("scale", |x| Op::Scale(x, s), |x| x * s)
    }

    /// Tensor times a single-element var.
    pub fn mul_scalar(self, s: Var<'t>) -> Var<'t> {
        self.same_tape(&s);
        let sv = s.item();
        let (shape, out) = self.with_value(|sh, v| (sh.to_vec(), v.iter().map(|x| x * sv).collect()));
        let ng = self.needs_grad() || s.needs_grad();
        self.tape
            .push(shape, out, Op::MulScalar(self.id, s.id), ng, "mul_scalar")
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_const(self, mask: Vec<f64>) -> Var<'t> {
        let (shape, out) = self.with_value(|s, v| {
            assert_eq!(v.len(), mask.len(), "mul_const: length mismatch");
            (s.to_vec(), v.iter().zip(&mask).map(|(a, b)| a * b).collect())
        });
        self.tape
            .push(shape, out, Op::MulConst(self.id, mask), self.needs_grad(), "mul_const")
    }

    /// `[r, c] * [r, 1]`: scales row `i` by `s[i]`.
    pub fn scale_rows(self, s: Var<'t>) -> Var<'t> {
        self.same_tape(&s);
        let sv = s.values();
        let (shape, out) = self.with_value(|sh, v| {
            let (r, c) = dims2(sh, "scale_rows");
            assert_eq!(sv.len(), r, "scale_rows: {} factors for {r} rows", sv.len());
            let out = v
                .chunks(c)
                .zip(&sv)
                .flat_map(|(row, f)| row.iter().map(move |x| x * f))
                .collect();
            (sh.to_vec(), out)
        });
        let ng = self.needs_grad() || s.needs_grad();
        self.tape
            .push(shape, out, Op::ScaleRows(self.id, s.id), ng, "scale_rows")
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        let (sa, a) = self.with_value(|s, v| (s.to_vec(), v.to_vec()));
        let (m, k) = dims2(&sa, "matmul");
        let (n, out) = other.with_value(|sb, b| {
            let (k2, n) = dims2(sb, "matmul");
            assert_eq!(k, k2, "matmul: inner dims {sa:?} x {sb:?}");
            (n, matmul_raw(&a, b, m, k, n))
        });
        let ng = self.needs_grad() || other.needs_grad();
        self.tape
            .push(vec![m, n], out, Op::MatMul(self.id, other.id), ng, "matmul")
    }

    pub fn transpose(self) -> Var<'t> {
        let (r, c, out) = self.with_value(|s, v| {
            let (r, c) = dims2(s, "transpose");
            (r, c, transpose_raw(v, r, c))
        });
        let _ = r;
        self.tape.push(
            vec![c, r],
            out,
            Op::Transpose(self.id),
            self.needs_grad(),
            "transpose",
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary("sigmoid", Op::Sigmoid, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary("relu", Op::Relu, |x| x.max(0.0))
    }

    /// ELU with alpha = 1.
    pub fn elu(self) -> Var<'t> {
        self.unary("elu", Op::Elu, elu)
    }

    /// Straight-through floor: forward floors, backward is the identity.
    pub fn floor_ste(self) -> Var<'t> {
        self.unary("floor_ste", Op::FloorSte, f64::floor)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary("clamp", |x| Op::Clamp { x, lo, hi }, |x| x.clamp(lo, hi))
    }

    pub fn softmax(self, axis: usize) -> Var<'t> {
        let (shape, out) = self.with_value(|s, v| {
            let (outer, len, inner) = axis_layout(s, axis);
            let mut out = vec![0.0; v.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * len * inner + k * inner + i;
                    let m = (0..len).map(|k| v[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for k in 0..len {
                        let e = (v[at(k)] - m).exp();
                        out[at(k)] = e;
                        z += e;
                    }
                    for k in 0..len {
                        out[at(k)] /= z;
                    }
                }
            }
            (s.to_vec(), out)
        });
        self.tape.push(
            shape,
            out,
            Op::Softmax { x: self.id, axis },
            self.needs_grad(),
            "softmax",
        )
    }

    /// 1-D convolution over rows of `[L, c_in]` with "same" zero padding.
    ///
    /// `w` is `[c_out, c_in, k]` with odd `k`; `b` is `[c_out]`.
    pub fn conv1d(self, w: Var<'t>, b: Var<'t>) -> Var<'t> {
        self.same_tape(&w);
        self.same_tape(&b);
        let (xs, x) = self.with_value(|s, v| (s.to_vec(), v.to_vec()));
        let (len, cin) = dims2(&xs, "conv1d");
        let (ws, wv) = w.with_value(|s, v| (s.to_vec(), v.to_vec()));
        assert_eq!(ws.len(), 3, "conv1d: weight must be [c_out, c_in, k]");
        let (cout, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], cin, "conv1d: weight c_in {} vs input {}", ws[1], cin);
        assert!(k % 2 == 1, "conv1d: kernel must be odd");
        let bv = b.values();
        assert_eq!(bv.len(), cout, "conv1d: bias length");
        let pad = k / 2;
        let mut out = vec![0.0; len * cout];
        for t in 0..len {
            for o in 0..cout {
                let mut acc = bv[o];
                for kk in 0..k {
                    let src = t + kk;
                    if src < pad || src - pad >= len {
                        continue;
                    }
                    let xr = &x[(src - pad) * cin..(src - pad + 1) * cin];
                    for (i, xv) in xr.iter().enumerate() {
                        acc += wv[(o * cin + i) * k + kk] * xv;
                    }
                }
                out[t * cout + o] = acc;
            }
        }
        let ng = self.needs_grad() || w.needs_grad() || b.needs_grad();
        self.tape.push(
            vec![len, cout],
            out,
            Op::Conv1d {
                x: self.id,
                w: w.id,
                b: b.id,
            },
            ng,
            "conv1d",
        )
    }

    /// Max-pool over rows with "same" padding; output length is
    /// `(L + 2*(window/2) - window) / stride + 1`. Ties go to the lowest index.
    pub fn max_pool(self, window: usize, stride: usize) -> Var<'t> {
        assert!(window >= 1 && stride >= 1);
        let (shape, out, argmax) = self.with_value(|s, v| {
            let (len, c) = dims2(s, "max_pool");
            let pad = window / 2;
            let out_len = (len + 2 * pad - window) / stride + 1;
            let mut out = vec![0.0; out_len * c];
            let mut argmax = vec![0usize; out_len * c];
            for o in 0..out_len {
                let start = (o * stride) as isize - pad as isize;
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for w in 0..window as isize {
                        let r = start + w;
                        if r < 0 || r as usize >= len {
                            continue;
                        }
                        let val = v[r as usize * c + ch];
                        if best_i == usize::MAX || val > best {
                            best = val;
                            best_i = r as usize;
                        }
                    }
                    out[o * c + ch] = best;
                    argmax[o * c + ch] = best_i * c + ch;
                }
            }
            (vec![out_len, c], out, argmax)
        });
        self.tape.push(
            shape,
            out,
            Op::MaxPool {
                x: self.id,
                argmax,
            },
            self.needs_grad(),
            "max_pool",
        )
    }

    /// `[r, c] -> [1, c]` column means.
    pub fn mean_rows(self) -> Var<'t> {
        let (c, out) = self.with_value(|s, v| {
            let (r, c) = dims2(s, "mean_rows");
            let mut out = vec![0.0; c];
            for row in v.chunks(c) {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            (c, out)
        });
        self.tape
            .push(vec![1, c], out, Op::MeanRows(self.id), self.needs_grad(), "mean_rows")
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let tape = parts[0].tape;
        let c = dims2(&parts[0].shape(), "concat_rows").1;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            parts[0].same_tape(p);
            p.with_value(|s, v| {
                let (r, pc) = dims2(s, "concat_rows");
                assert_eq!(pc, c, "concat_rows: column mismatch");
                rows += r;
                out.extend_from_slice(v);
            });
        }
        let ng = parts.iter().any(Var::needs_grad);
        tape.push(
            vec![rows, c],
            out,
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            ng,
            "concat_rows",
        )
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let tape = parts[0].tape;
        let r = dims2(&parts[0].shape(), "concat_cols").0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pr, pc) = dims2(&p.shape(), "concat_cols");
                assert_eq!(pr, r, "concat_cols: row mismatch");
                pc
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            p.with_value(|_, v| {
                for i in 0..r {
                    out[i * total + off..i * total + off + w].copy_from_slice(&v[i * w..(i + 1) * w]);
                }
            });
            off += w;
        }
        let ng = parts.iter().any(Var::needs_grad);
        tape.push(
            vec![r, total],
            out,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            ng,
            "concat_cols",
        )
    }

    pub fn slice_cols(self, start: usize, width: usize) -> Var<'t> {
        let (r, out) = self.with_value(|s, v| {
            let (r, c) = dims2(s, "slice_cols");
            assert!(start + width <= c, "slice_cols: {start}+{width} > {c}");
            let mut out = Vec::with_capacity(r * width);
            for i in 0..r {
                out.extend_from_slice(&v[i * c + start..i * c + start + width]);
            }
            (r, out)
        });
        self.tape.push(
            vec![r, width],
            out,
            Op::SliceCols { x: self.id, start },
            self.needs_grad(),
            "slice_cols",
        )
    }

    /// Row gather (embedding lookup): `[n_rows, c]` table, returns `[idx.len(), c]`.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let (c, out) = self.with_value(|s, v| {
            let (r, c) = dims2(s, "gather_rows");
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                assert!(i < r, "gather_rows: index {i} out of range {r}");
                out.extend_from_slice(&v[i * c..(i + 1) * c]);
            }
            (c, out)
        });
        self.tape.push(
            vec![idx.len(), c],
            out,
            Op::GatherRows {
                table: self.id,
                idx: idx.to_vec(),
            },
            self.needs_grad(),
            "gather_rows",
        )
    }

    /// Builds `[len, c]` with rows `idx[n]` taken from `self[n]` and every
    /// other row equal to the single-row `fill`.
    pub fn scatter_rows(self, fill: Var<'t>, idx: &[usize], len: usize) -> Var<'t> {
        self.same_tape(&fill);
        let (sel_shape, sel) = self.with_value(|s, v| (s.to_vec(), v.to_vec()));
        let (n, c) = dims2(&sel_shape, "scatter_rows");
        assert_eq!(n, idx.len(), "scatter_rows: index count");
        let fillv = fill.values();
        assert_eq!(fillv.len(), c, "scatter_rows: fill width");
        let mut out = Vec::with_capacity(len * c);
        for _ in 0..len {
            out.extend_from_slice(&fillv);
        }
        let mut seen = vec![false; len];
        for (k, &i) in idx.iter().enumerate() {
            assert!(i < len && !seen[i], "scatter_rows: bad index {i}");
            seen[i] = true;
            out[i * c..(i + 1) * c].copy_from_slice(&sel[k * c..(k + 1) * c]);
        }
        let ng = self.needs_grad() || fill.needs_grad();
        self.tape.push(
            vec![len, c],
            out,
            Op::ScatterRows {
                sel: self.id,
                fill: fill.id,
                idx: idx.to_vec(),
            },
            ng,
            "scatter_rows",
        )
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.with_value(|_, v| v.iter().sum());
        self.tape
            .push(vec![1], vec![s], Op::Sum(self.id), self.needs_grad(), "sum")
    }

    pub fn mean(self) -> Var<'t> {
        let s = self.with_value(|_, v| v.iter().sum::<f64>() / v.len() as f64);
        self.tape
            .push(vec![1], vec![s], Op::Mean(self.id), self.needs_grad(), "mean")
    }

    /// Softmax cross-entropy of a logit vector against a 0-based class index,
    /// in log-sum-exp form.
    pub fn cross_entropy(self, label: usize) -> Var<'t> {
        let (loss, probs) = self.with_value(|_, z| {
            assert!(label < z.len(), "cross_entropy: label {label} >= {}", z.len());
            let lse = log_sum_exp(z);
            let probs: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
            (lse - z[label], probs)
        });
        self.tape.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits: self.id,
                label,
                probs,
            },
            self.needs_grad(),
            "cross_entropy",
        )
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

fn add_into(grads: &mut [Option<Vec<f64>>], id: usize, delta: &[f64]) {
    acc(grads, id, delta.len(), |g| {
        for (gi, d) in g.iter_mut().zip(delta) {
            *gi += d;
        }
    });
}

pub(crate) fn backward_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let ng = |i: usize| nodes[i].needs_grad;
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Add(a, b) => {
            if ng(*a) {
                add_into(grads, *a, g);
            }
            if ng(*b) {
                add_into(grads, *b, g);
            }
        }
        Op::Sub(a, b) => {
            if ng(*a) {
                add_into(grads, *a, g);
            }
            if ng(*b) {
                acc(grads, *b, g.len(), |gb| {
                    for (x, d) in gb.iter_mut().zip(g) {
                        *x -= d;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if ng(*a) {
                acc(grads, *a, g.len(), |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
            }
            if ng(*b) {
                acc(grads, *b, g.len(), |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
        }
        Op::AddRow(a, b) => {
            if ng(*a) {
                add_into(grads, *a, g);
            }
            if ng(*b) {
                let c = nodes[*b].value.len();
                acc(grads, *b, c, |gb| {
                    for row in g.chunks(c) {
                        for (x, d) in gb.iter_mut().zip(row) {
                            *x += d;
                        }
                    }
                });
            }
        }
        Op::Scale(a, s) => {
            if ng(*a) {
                acc(grads, *a, g.len(), |ga| {
                    for (x, d) in ga.iter_mut().zip(g) {
                        *x += s * d;
                    }
                });
            }
        }
        Op::MulScalar(a, s) => {
            let sv = nodes[*s].value[0];
            if ng(*a) {
                acc(grads, *a, g.len(), |ga| {
                    for (x, d) in ga.iter_mut().zip(g) {
                        *x += sv * d;
                    }
                });
            }
            if ng(*s) {
                let av = &nodes[*a].value;
                let dot: f64 = g.iter().zip(av).map(|(d, x)| d * x).sum();
                acc(grads, *s, 1, |gs| gs[0] += dot);
            }
        }
        Op::MulConst(a, mask) => {
            if ng(*a) {
                acc(grads, *a, g.len(), |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * mask[i];
                    }
                });
            }
        }
        Op::ScaleRows(a, s) => {
            let c = nodes[*a].shape[1];
            let sv = &nodes[*s].value;
            if ng(*a) {
                acc(grads, *a, g.len(), |ga| {
                    for (i, f) in sv.iter().enumerate() {
                        for j in 0..c {
                            ga[i * c + j] += g[i * c + j] * f;
                        }
                    }
                });
            }
            if ng(*s) {
                let av = &nodes[*a].value;
                acc(grads, *s, sv.len(), |gs| {
                    for (i, gi) in gs.iter_mut().enumerate() {
                        *gi += (0..c).map(|j| g[i * c + j] * av[i * c + j]).sum::<f64>();
                    }
                });
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            if ng(*a) {
                // dA = dC · Bᵀ
                let bt = transpose_raw(&nodes[*b].value, k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                add_into(grads, *a, &da);
            }
            if ng(*b) {
                // dB = Aᵀ · dC
                let at = transpose_raw(&nodes[*a].value, m, k);
                let db = matmul_raw(&at, g, k, m, n);
                add_into(grads, *b, &db);
            }
        }
        Op::Transpose(a) => {
            if ng(*a) {
                let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                // g is [c, r]
                let da = transpose_raw(g, c, r);
                add_into(grads, *a, &da);
            }
        }
        Op::Sigmoid(a) => {
            if ng(*a) {
                let y = &node.value;
                acc(grads, *a, g.len(), |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
        }
        Op::Relu(a) => {
            if ng(*a) {
                let x = &nodes[*a].value;
                acc(grads, *a, g.len(), |ga| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
        }
        Op::Elu(a) => {
            if ng(*a) {
                let x = &nodes[*a].value;
                let y = &node.value;
                acc(grads, *a, g.len(), |ga| {
                    for i in 0..g.len() {
                        let d = if x[i] > 0.0 { 1.0 } else { y[i] + 1.0 };
                        ga[i] += g[i] * d;
                    }
                });
            }
        }
        Op::FloorSte(a) => {
            if ng(*a) {
                add_into(grads, *a, g);
            }
        }
        Op::Clamp { x, lo, hi } => {
            if ng(*x) {
                let xv = &nodes[*x].value;
                acc(grads, *x, g.len(), |gx| {
                    for i in 0..g.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                });
            }
        }
        Op::Softmax { x, axis } => {
            if ng(*x) {
                let y = &node.value;
                let (outer, len, inner) = axis_layout(&node.shape, *axis);
                acc(grads, *x, g.len(), |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * len * inner + k * inner + i;
                            let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..len {
                                gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                });
            }
        }
        Op::Conv1d { x, w, b } => {
            let (len, cin) = (nodes[*x].shape[0], nodes[*x].shape[1]);
            let ws = &nodes[*w].shape;
            let (cout, k) = (ws[0], ws[2]);
            let pad = k / 2;
            let xv = &nodes[*x].value;
            let wv = &nodes[*w].value;
            if ng(*x) {
                acc(grads, *x, xv.len(), |gx| {
                    for t in 0..len {
                        for o in 0..cout {
                            let d = g[t * cout + o];
                            if d == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                let src = t + kk;
                                if src < pad || src - pad >= len {
                                    continue;
                                }
                                let r = src - pad;
                                for i in 0..cin {
                                    gx[r * cin + i] += d * wv[(o * cin + i) * k + kk];
                                }
                            }
                        }
                    }
                });
            }
            if ng(*w) {
                acc(grads, *w, wv.len(), |gw| {
                    for t in 0..len {
                        for o in 0..cout {
                            let d = g[t * cout + o];
                            if d == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                let src = t + kk;
                                if src < pad || src - pad >= len {
                                    continue;
                                }
                                let r = src - pad;
                                for i in 0..cin {
                                    gw[(o * cin + i) * k + kk] += d * xv[r * cin + i];
                                }
                            }
                        }
                    }
                });
            }
            if ng(*b) {
                acc(grads, *b, cout, |gb| {
                    for t in 0..len {
                        for o in 0..cout {
                            gb[o] += g[t * cout + o];
                        }
                    }
                });
            }
        }
        Op::MaxPool { x, argmax } => {
            if ng(*x) {
                let n = nodes[*x].value.len();
                acc(grads, *x, n, |gx| {
                    for (d, &src) in g.iter().zip(argmax) {
                        gx[src] += d;
                    }
                });
            }
        }
        Op::MeanRows(a) => {
            if ng(*a) {
                let (r, c) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                acc(grads, *a, r * c, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j] / r as f64;
                        }
                    }
                });
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                if ng(p) {
                    add_into(grads, p, &g[off..off + n]);
                }
                off += n;
            }
        }
        Op::ConcatCols(parts) => {
            let (r, total) = (node.shape[0], node.shape[1]);
            let mut off = 0;
            for &p in parts {
                let w = nodes[p].shape[1];
                if ng(p) {
                    acc(grads, p, r * w, |gp| {
                        for i in 0..r {
                            for j in 0..w {
                                gp[i * w + j] += g[i * total + off + j];
                            }
                        }
                    });
                }
                off += w;
            }
        }
        Op::SliceCols { x, start } => {
            if ng(*x) {
                let (r, c) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                let w = node.shape[1];
                acc(grads, *x, r * c, |gx| {
                    for i in 0..r {
                        for j in 0..w {
                            gx[i * c + start + j] += g[i * w + j];
                        }
                    }
                });
            }
        }
        Op::GatherRows { table, idx } => {
            if ng(*table) {
                let n = nodes[*table].value.len();
                let c = nodes[*table].shape[1];
                acc(grads, *table, n, |gt| {
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gt[i * c + j] += g[k * c + j];
                        }
                    }
                });
            }
        }
        Op::ScatterRows { sel, fill, idx } => {
            let (len, c) = (node.shape[0], node.shape[1]);
            if ng(*sel) {
                acc(grads, *sel, idx.len() * c, |gs| {
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gs[k * c + j] += g[i * c + j];
                        }
                    }
                });
            }
            if ng(*fill) {
                let mut chosen = vec![false; len];
                for &i in idx {
                    chosen[i] = true;
                }
                acc(grads, *fill, c, |gf| {
                    for (i, _) in chosen.iter().enumerate().filter(|(_, c)| !**c) {
                        for j in 0..c {
                            gf[j] += g[i * c + j];
                        }
                    }
                });
            }
        }
        Op::Sum(a) => {
            if ng(*a) {
                let n = nodes[*a].value.len();
                acc(grads, *a, n, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
        }
        Op::Mean(a) => {
            if ng(*a) {
                let n = nodes[*a].value.len();
                acc(grads, *a, n, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n as f64));
            }
        }
        Op::CrossEntropy {
            logits,
            label,
            probs,
        } => {
            if ng(*logits) {
                acc(grads, *logits, probs.len(), |gl| {
                    for (i, p) in probs.iter().enumerate() {
                        let t = if i == *label { 1.0 } else { 0.0 };
                        gl[i] += g[0] * (p - t);
                    }
                });
            }
        }
    }
}
