//! Op builders.  Primitives validate shapes, compute through [`kernels`],
//! and pass through [`Graph::emit`]; composites are built from primitives so
//! their gradients need no rules of their own.

use std::sync::Arc;

use rand::Rng;

use super::graph::{Graph, Op};
use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use super::{Result, TensorError};
use crate::real::Real;

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::IncompatibleShapes {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn two_d<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        _ => Err(TensorError::BadOperand {
            op,
            expected: "rank-2 tensor",
            got: t.shape().to_vec(),
        }),
    }
}

fn map2<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<T: Real> Graph<T> {
    // ---- elementwise primitives ----

    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", a, b)?;
        let v = Tensor::from_parts(a.shape().to_vec(), map2(a.data(), b.data(), |x, y| x + y));
        self.emit("add", Op::Add, &[a, b], v)
    }

    pub fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", a, b)?;
        let v = Tensor::from_parts(a.shape().to_vec(), map2(a.data(), b.data(), |x, y| x - y));
        self.emit("sub", Op::Sub, &[a, b], v)
    }

    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", a, b)?;
        let v = Tensor::from_parts(a.shape().to_vec(), map2(a.data(), b.data(), |x, y| x * y));
        self.emit("mul", Op::Mul, &[a, b], v)
    }

    pub fn div(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", a, b)?;
        let v = Tensor::from_parts(a.shape().to_vec(), map2(a.data(), b.data(), |x, y| x / y));
        self.emit("div", Op::Div, &[a, b], v)
    }

    pub fn neg(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let v = Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| -x).collect());
        self.emit("neg", Op::Neg, &[a], v)
    }

    pub fn scalar_mul(&mut self, a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        let v = Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| c * x).collect());
        self.emit("scalar_mul", Op::ScalarMul(c), &[a], v)
    }

    pub fn relu(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let v = Tensor::from_parts(
            a.shape().to_vec(),
            a.data()
                .iter()
                .map(|&x| if x > T::zero() { x } else { T::zero() })
                .collect(),
        );
        self.emit("relu", Op::Relu, &[a], v)
    }

    pub fn log(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let v = Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| x.ln()).collect());
        self.emit("log", Op::Log, &[a], v)
    }

    pub fn exp(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let v = Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| x.exp()).collect());
        self.emit("exp", Op::Exp, &[a], v)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = two_d("matmul", a)?;
        let (k2, n) = two_d("matmul", b)?;
        if k != k2 {
            return Err(TensorError::IncompatibleShapes {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let v = Tensor::from_parts(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n));
        self.emit("matmul", Op::Matmul, &[a, b], v)
    }

    /// aᵀ @ b for a(k,m), b(k,n).
    pub fn matmul_at(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (k, m) = two_d("matmul_at", a)?;
        let (k2, n) = two_d("matmul_at", b)?;
        if k != k2 {
            return Err(TensorError::IncompatibleShapes {
                op: "matmul_at",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let v = Tensor::from_parts(vec![m, n], kernels::matmul_at(a.data(), b.data(), m, k, n));
        self.emit("matmul_at", Op::MatmulAT, &[a, b], v)
    }

    /// a @ bᵀ for a(m,k), b(n,k).
    pub fn matmul_bt(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = two_d("matmul_bt", a)?;
        let (n, k2) = two_d("matmul_bt", b)?;
        if k != k2 {
            return Err(TensorError::IncompatibleShapes {
                op: "matmul_bt",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let v = Tensor::from_parts(vec![m, n], kernels::matmul_bt(a.data(), b.data(), m, k, n));
        self.emit("matmul_bt", Op::MatmulBT, &[a, b], v)
    }

    pub fn transpose(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, n) = two_d("transpose", a)?;
        let v = Tensor::from_parts(vec![n, m], kernels::transpose(a.data(), m, n));
        self.emit("transpose", Op::Transpose, &[a], v)
    }

    pub fn reshape(&mut self, a: &Tensor<T>, shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != a.numel() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                got: a.numel(),
            });
        }
        let v = Tensor::from_parts(shape, a.data().to_vec());
        self.emit("reshape", Op::Reshape, &[a], v)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let v = Tensor::scalar(kernels::sum_all(a.data()));
        self.emit("sum", Op::Sum, &[a], v)
    }

    pub fn mean(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        if a.numel() == 0 {
            return Err(TensorError::BadOperand {
                op: "mean",
                expected: "non-empty tensor",
                got: a.shape().to_vec(),
            });
        }
        let s = self.sum(a)?;
        self.scalar_mul(&s, T::one() / T::from_f64(a.numel() as f64))
    }

    // ---- structural ----

    pub fn stack(&mut self, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let Some(first) = parts.first() else {
            return Err(TensorError::BadOperand {
                op: "stack",
                expected: "at least one tensor",
                got: Vec::new(),
            });
        };
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            same_shape("stack", first, p)?;
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(first.shape());
        let v = Tensor::from_parts(shape, data);
        self.emit("stack", Op::Stack, parts, v)
    }

    /// out[e] = a[idx[e]] over flat storage.
    pub fn gather_flat(
        &mut self,
        a: &Tensor<T>,
        idx: Vec<usize>,
        out_shape: impl Into<Vec<usize>>,
    ) -> Result<Tensor<T>> {
        let out_shape = out_shape.into();
        let expected: usize = out_shape.iter().product();
        if idx.len() != expected {
            return Err(TensorError::Invalid {
                op: "gather_flat",
                msg: format!("{} indices for output of {expected}", idx.len()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.numel()) {
            return Err(TensorError::Invalid {
                op: "gather_flat",
                msg: format!("index {bad} out of range for {} elements", a.numel()),
            });
        }
        let v = Tensor::from_parts(out_shape, kernels::gather_flat(a.data(), &idx));
        self.emit("gather_flat", Op::GatherFlat { idx: Arc::new(idx) }, &[a], v)
    }

    /// out[idx[e]] += a[e] into a zero tensor of `out_shape`.
    pub fn scatter_add_flat(
        &mut self,
        a: &Tensor<T>,
        idx: Vec<usize>,
        out_shape: impl Into<Vec<usize>>,
    ) -> Result<Tensor<T>> {
        let out_shape = out_shape.into();
        let out_numel: usize = out_shape.iter().product();
        if idx.len() != a.numel() {
            return Err(TensorError::Invalid {
                op: "scatter_add_flat",
                msg: format!("{} indices for input of {}", idx.len(), a.numel()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_numel) {
            return Err(TensorError::Invalid {
                op: "scatter_add_flat",
                msg: format!("index {bad} out of range for {out_numel} elements"),
            });
        }
        let v = Tensor::from_parts(out_shape, kernels::scatter_add_flat(a.data(), &idx, out_numel));
        self.emit(
            "scatter_add_flat",
            Op::ScatterAddFlat { idx: Arc::new(idx) },
            &[a],
            v,
        )
    }

    // ---- convolution family ----

    fn conv_dims(
        op: &'static str,
        x: &Tensor<T>,
        k: &Tensor<T>,
    ) -> Result<ConvDims> {
        let (batch, cin, h, w) = match x.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => {
                return Err(TensorError::BadOperand {
                    op,
                    expected: "input of shape [batch, cin, h, w]",
                    got: x.shape().to_vec(),
                })
            }
        };
        let (cout, cin2, kh, kw) = match k.shape() {
            [o, c, p, q] => (*o, *c, *p, *q),
            _ => {
                return Err(TensorError::BadOperand {
                    op,
                    expected: "kernel of shape [cout, cin, kh, kw]",
                    got: k.shape().to_vec(),
                })
            }
        };
        if cin != cin2 || kh == 0 || kw == 0 || kh > h || kw > w {
            return Err(TensorError::IncompatibleShapes {
                op,
                lhs: x.shape().to_vec(),
                rhs: k.shape().to_vec(),
            });
        }
        Ok(ConvDims {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
        })
    }

    /// Valid (no padding), stride-1 cross-correlation.
    pub fn conv2d(&mut self, x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
        let d = Self::conv_dims("conv2d", x, k)?;
        let v = Tensor::from_parts(
            vec![d.batch, d.cout, d.oh(), d.ow()],
            kernels::conv2d(x.data(), k.data(), &d),
        );
        self.emit("conv2d", Op::Conv2d, &[x, k], v)
    }

    /// Adjoint of [`Self::conv2d`] in its input: full correlation of the
    /// output gradient with the kernel.
    pub fn conv2d_vjp_input(&mut self, u: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, cout, oh, ow) = match u.shape() {
            [b, o, i, j] => (*b, *o, *i, *j),
            _ => {
                return Err(TensorError::BadOperand {
                    op: "conv2d_vjp_input",
                    expected: "grad of shape [batch, cout, oh, ow]",
                    got: u.shape().to_vec(),
                })
            }
        };
        let (cout2, cin, kh, kw) = match k.shape() {
            [o, c, p, q] => (*o, *c, *p, *q),
            _ => {
                return Err(TensorError::BadOperand {
                    op: "conv2d_vjp_input",
                    expected: "kernel of shape [cout, cin, kh, kw]",
                    got: k.shape().to_vec(),
                })
            }
        };
        if cout != cout2 {
            return Err(TensorError::IncompatibleShapes {
                op: "conv2d_vjp_input",
                lhs: u.shape().to_vec(),
                rhs: k.shape().to_vec(),
            });
        }
        let d = ConvDims {
            batch,
            cin,
            h: oh + kh - 1,
            w: ow + kw - 1,
            cout,
            kh,
            kw,
        };
        let v = Tensor::from_parts(
            vec![d.batch, d.cin, d.h, d.w],
            kernels::conv2d_vjp_input(u.data(), k.data(), &d),
        );
        self.emit("conv2d_vjp_input", Op::Conv2dVjpInput, &[u, k], v)
    }

    /// Adjoint of [`Self::conv2d`] in its kernel.
    pub fn conv2d_vjp_kernel(&mut self, u: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, cout, oh, ow) = match u.shape() {
            [b, o, i, j] => (*b, *o, *i, *j),
            _ => {
                return Err(TensorError::BadOperand {
                    op: "conv2d_vjp_kernel",
                    expected: "grad of shape [batch, cout, oh, ow]",
                    got: u.shape().to_vec(),
                })
            }
        };
        let (batch2, cin, h, w) = match x.shape() {
            [b, c, hh, ww] => (*b, *c, *hh, *ww),
            _ => {
                return Err(TensorError::BadOperand {
                    op: "conv2d_vjp_kernel",
                    expected: "input of shape [batch, cin, h, w]",
                    got: x.shape().to_vec(),
                })
            }
        };
        if batch != batch2 || oh > h || ow > w {
            return Err(TensorError::IncompatibleShapes {
                op: "conv2d_vjp_kernel",
                lhs: u.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        let d = ConvDims {
            batch,
            cin,
            h,
            w,
            cout,
            kh: h - oh + 1,
            kw: w - ow + 1,
        };
        let v = Tensor::from_parts(
            vec![d.cout, d.cin, d.kh, d.kw],
            kernels::conv2d_vjp_kernel(u.data(), x.data(), &d),
        );
        self.emit("conv2d_vjp_kernel", Op::Conv2dVjpKernel, &[u, x], v)
    }

    // ---- channel bias support ----

    /// bias(c) broadcast to [batch, c, h, w].
    pub fn broadcast_channel(
        &mut self,
        bias: &Tensor<T>,
        batch: usize,
        h: usize,
        w: usize,
    ) -> Result<Tensor<T>> {
        if bias.rank() != 1 {
            return Err(TensorError::BadOperand {
                op: "broadcast_channel",
                expected: "rank-1 bias",
                got: bias.shape().to_vec(),
            });
        }
        let c = bias.numel();
        let v = Tensor::from_parts(
            vec![batch, c, h, w],
            kernels::broadcast_channel(bias.data(), batch, c, h * w),
        );
        self.emit("broadcast_channel", Op::BroadcastChannel, &[bias], v)
    }

    /// Sum over batch and spatial axes: [batch, c, h, w] -> [c].
    pub fn channel_sum(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, c, h, w) = match x.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => {
                return Err(TensorError::BadOperand {
                    op: "channel_sum",
                    expected: "rank-4 tensor",
                    got: x.shape().to_vec(),
                })
            }
        };
        let v = Tensor::from_parts(vec![c], kernels::channel_sum(x.data(), batch, c, h * w));
        self.emit("channel_sum", Op::ChannelSum, &[x], v)
    }

    // ---- composites ----

    /// Scalar replicated to `shape`; gradient of `sum`.
    pub fn broadcast_scalar(
        &mut self,
        s: &Tensor<T>,
        shape: impl Into<Vec<usize>>,
    ) -> Result<Tensor<T>> {
        let shape = shape.into();
        if !s.is_scalar() {
            return Err(TensorError::BadOperand {
                op: "broadcast_scalar",
                expected: "scalar",
                got: s.shape().to_vec(),
            });
        }
        let n: usize = shape.iter().product();
        let s11 = self.reshape(s, vec![1, 1])?;
        let row = self.matmul(&s11, &Tensor::ones(vec![1, n]))?;
        self.reshape(&row, shape)
    }

    /// Column (b,1) replicated across n columns.
    pub fn row_broadcast(&mut self, col: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
        let (_, one) = two_d("row_broadcast", col)?;
        if one != 1 {
            return Err(TensorError::BadOperand {
                op: "row_broadcast",
                expected: "column of shape [b, 1]",
                got: col.shape().to_vec(),
            });
        }
        self.matmul(col, &Tensor::ones(vec![1, n]))
    }

    /// Row sums of a matrix: (b,n) -> (b,1).
    pub fn row_sum(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, n) = two_d("row_sum", x)?;
        self.matmul(x, &Tensor::ones(vec![n, 1]))
    }

    /// Per-row max of |x| as a differentiable gather: (b,n) -> (b,1).
    /// Ties resolve to the lowest flat index.
    pub fn row_max_abs(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, n) = two_d("row_max_abs", x)?;
        if n == 0 {
            return Err(TensorError::BadOperand {
                op: "row_max_abs",
                expected: "non-empty rows",
                got: x.shape().to_vec(),
            });
        }
        let mut idx = Vec::with_capacity(b);
        let mut sign = Vec::with_capacity(b);
        for r in 0..b {
            let row = &x.data()[r * n..(r + 1) * n];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v.abs() > row[best].abs() {
                    best = j;
                }
            }
            idx.push(r * n + best);
            let v = row[best];
            sign.push(if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            });
        }
        let picked = self.gather_flat(x, idx, vec![b, 1])?;
        let sign = Tensor::from_parts(vec![b, 1], sign);
        self.mul(&picked, &sign)
    }

    /// Max of |x| over all elements, as a scalar.
    pub fn max_abs(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let flat = self.reshape(x, vec![1, x.numel()])?;
        let m = self.row_max_abs(&flat)?;
        self.reshape(&m, Vec::new())
    }

    /// 2x2 max pooling with stride 2; spatial dims must be even.
    /// Ties take the lowest flat index, matching the gradient convention.
    pub fn maxpool2d(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c, h, w) = match x.shape() {
            [b, c, h, w] if h % 2 == 0 && w % 2 == 0 => (*b, *c, *h, *w),
            _ => {
                return Err(TensorError::BadOperand {
                    op: "maxpool2d",
                    expected: "rank-4 tensor with even spatial dims",
                    got: x.shape().to_vec(),
                })
            }
        };
        let (oh, ow) = (h / 2, w / 2);
        let data = x.data();
        let mut idx = Vec::with_capacity(b * c * oh * ow);
        for bc in 0..b * c {
            let plane = bc * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = plane + (2 * i) * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = plane + (2 * i + di) * w + 2 * j + dj;
                        if data[cand] > data[best] {
                            best = cand;
                        }
                    }
                    idx.push(best);
                }
            }
        }
        self.gather_flat(x, idx, vec![b, c, oh, ow])
    }

    /// Inverted-scaling dropout: surviving activations are multiplied by
    /// 1/(1-p).  In eval mode this is the identity.  The mask consumes one
    /// f64 draw per element regardless of width, in flat order.
    pub fn dropout(
        &mut self,
        x: &Tensor<T>,
        p: f64,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid {
                op: "dropout",
                msg: format!("rate {p} outside [0, 1)"),
            });
        }
        if !train {
            return Ok(x.clone());
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| {
                if rng.gen::<f64>() >= p {
                    keep
                } else {
                    T::zero()
                }
            })
            .collect();
        let mask = Tensor::from_parts(x.shape().to_vec(), mask);
        self.mul(x, &mask)
    }

    /// Numerically stable row softmax.  The row-max shift is a constant, so
    /// gradients are those of softmax itself.
    pub fn softmax(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, n) = two_d("softmax", x)?;
        let shifted = self.sub_row_max_const(x, b, n)?;
        let e = self.exp(&shifted)?;
        let s = self.row_sum(&e)?;
        let sbc = self.row_broadcast(&s, n)?;
        self.div(&e, &sbc)
    }

    /// Mean cross-entropy between logits and one-hot targets.
    /// Targets are constants: no gradient flows into them.
    pub fn cross_entropy(&mut self, logits: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, n) = two_d("cross_entropy", logits)?;
        same_shape("cross_entropy", logits, targets)?;
        for r in 0..b {
            let row = &targets.data()[r * n..(r + 1) * n];
            let ones = row.iter().filter(|&&v| v == T::one()).count();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != n - 1 {
                return Err(TensorError::Invalid {
                    op: "cross_entropy",
                    msg: format!("target row {r} is not one-hot"),
                });
            }
        }
        let rowmax = self.row_max_const(logits, b, n);
        let mbc = kernels_row_broadcast_const(&rowmax, b, n);
        let shifted = self.sub(logits, &mbc)?;
        let e = self.exp(&shifted)?;
        let s = self.row_sum(&e)?;
        let l = self.log(&s)?;
        let lse = self.add(&l, &rowmax)?;
        let lbc = self.row_broadcast(&lse, n)?;
        let diff = self.sub(&lbc, logits)?;
        let picked = self.mul(&diff, &targets.detach())?;
        let per = self.row_sum(&picked)?;
        let total = self.sum(&per)?;
        self.scalar_mul(&total, T::one() / T::from_f64(b as f64))
    }

    /// Mean squared error over all elements of same-shaped tensors.
    pub fn mse(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mse", a, b)?;
        let d = self.sub(a, b)?;
        let sq = self.mul(&d, &d)?;
        self.mean(&sq)
    }

    /// Mean absolute error; |t| is relu(t) + relu(-t), so the subgradient at
    /// zero is zero.
    pub fn mae(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mae", a, b)?;
        let d = self.sub(a, b)?;
        let pos = self.relu(&d)?;
        let nd = self.neg(&d)?;
        let neg = self.relu(&nd)?;
        let abs = self.add(&pos, &neg)?;
        self.mean(&abs)
    }

    /// Row maxima as a detached (b,1) constant.
    fn row_max_const(&self, x: &Tensor<T>, b: usize, n: usize) -> Tensor<T> {
        let mut m = Vec::with_capacity(b);
        for r in 0..b {
            let row = &x.data()[r * n..(r + 1) * n];
            let mut best = row[0];
            for &v in &row[1..] {
                if v > best {
                    best = v;
                }
            }
            m.push(best);
        }
        Tensor::from_parts(vec![b, 1], m)
    }

    fn sub_row_max_const(&mut self, x: &Tensor<T>, b: usize, n: usize) -> Result<Tensor<T>> {
        let rowmax = self.row_max_const(x, b, n);
        let mbc = kernels_row_broadcast_const(&rowmax, b, n);
        self.sub(x, &mbc)
    }
}

/// Constant-only broadcast used inside stabilised composites; stays off the
/// graph by construction.
fn kernels_row_broadcast_const<T: Real>(col: &Tensor<T>, b: usize, n: usize) -> Tensor<T> {
    let mut out = Vec::with_capacity(b * n);
    for r in 0..b {
        let v = col.data()[r];
        out.extend(std::iter::repeat(v).take(n));
    }
    Tensor::from_parts(vec![b, n], out)
}

impl<T: Real> Tensor<T> {
    /// Row-wise argmax for rank-2 tensors; ties take the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let [b, n] = self.shape() else {
            panic!("argmax_rows on shape {:?}", self.shape());
        };
        let (b, n) = (*b, *n);
        let mut out = Vec::with_capacity(b);
        for r in 0..b {
            let row = &self.data()[r * n..(r + 1) * n];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
        out
    }
}
