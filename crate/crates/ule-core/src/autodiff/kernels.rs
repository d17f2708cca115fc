//! Dense kernels behind the ops.  Element order of every accumulation is
//! fixed, so results are bit-identical across runs of the same build.
//! `mul_add` is explicit: the compiler will not contract a*b+c on its own.

use crate::real::Real;

/// Columns held in registers per C-row segment; narrow enough that the
/// four-row kernel's accumulators all stay vector-resident even for f64.
const TILE: usize = 32;
/// Rows of B walked per pass; keeps the active B stripe L2-resident.
const KBLOCK: usize = 128;

/// One register tile: cseg (length W) accumulates arow · bblock[:, j0..j0+W].
/// The fixed-size array keeps the accumulators in vector registers; B is the
/// only streamed operand, one load per fma.
#[inline(always)]
fn mm_tile<T: Real, const W: usize>(arow: &[T], bblock: &[T], n: usize, j0: usize, cseg: &mut [T]) {
    let mut acc: [T; W] = cseg.try_into().expect("tile width");
    for (brow_full, &av) in bblock.chunks_exact(n).zip(arow) {
        let brow: &[T; W] = brow_full[j0..j0 + W].try_into().expect("tile width");
        for l in 0..W {
            acc[l] = av.mul_add(brow[l], acc[l]);
        }
    }
    cseg.copy_from_slice(&acc);
}

/// Two-row tile: each streamed B row feeds both accumulators, halving the
/// loads per fma relative to `mm_tile`.
#[inline(always)]
fn mm_tile2<T: Real, const W: usize>(
    arow0: &[T],
    arow1: &[T],
    bblock: &[T],
    n: usize,
    j0: usize,
    cseg0: &mut [T],
    cseg1: &mut [T],
) {
    let mut acc0: [T; W] = cseg0.try_into().expect("tile width");
    let mut acc1: [T; W] = cseg1.try_into().expect("tile width");
    for ((brow_full, &av0), &av1) in bblock.chunks_exact(n).zip(arow0).zip(arow1) {
        let brow: &[T; W] = brow_full[j0..j0 + W].try_into().expect("tile width");
        for l in 0..W {
            acc0[l] = av0.mul_add(brow[l], acc0[l]);
            acc1[l] = av1.mul_add(brow[l], acc1[l]);
        }
    }
    cseg0.copy_from_slice(&acc0);
    cseg1.copy_from_slice(&acc1);
}

/// Four-row tile, W kept narrow so all four accumulator arrays stay in
/// registers for f64 too.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn mm_tile4<T: Real, const W: usize>(
    arow0: &[T],
    arow1: &[T],
    arow2: &[T],
    arow3: &[T],
    bblock: &[T],
    n: usize,
    j0: usize,
    cseg0: &mut [T],
    cseg1: &mut [T],
    cseg2: &mut [T],
    cseg3: &mut [T],
) {
    let mut acc0: [T; W] = cseg0.try_into().expect("tile width");
    let mut acc1: [T; W] = cseg1.try_into().expect("tile width");
    let mut acc2: [T; W] = cseg2.try_into().expect("tile width");
    let mut acc3: [T; W] = cseg3.try_into().expect("tile width");
    for ((((brow_full, &av0), &av1), &av2), &av3) in bblock
        .chunks_exact(n)
        .zip(arow0)
        .zip(arow1)
        .zip(arow2)
        .zip(arow3)
    {
        let brow: &[T; W] = brow_full[j0..j0 + W].try_into().expect("tile width");
        for l in 0..W {
            acc0[l] = av0.mul_add(brow[l], acc0[l]);
            acc1[l] = av1.mul_add(brow[l], acc1[l]);
            acc2[l] = av2.mul_add(brow[l], acc2[l]);
            acc3[l] = av3.mul_add(brow[l], acc3[l]);
        }
    }
    cseg0.copy_from_slice(&acc0);
    cseg1.copy_from_slice(&acc1);
    cseg2.copy_from_slice(&acc2);
    cseg3.copy_from_slice(&acc3);
}

/// C = A(m,k) @ B(k,n).
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// C += A(m,k) @ B(k,n).  Each output element accumulates in ascending-k
/// order regardless of tiling, so the blocking is invisible in the bits.
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut kb = 0;
    while kb < k {
        let ke = (kb + KBLOCK).min(k);
        let bblock = &b[kb * n..ke * n];
        let mut i = 0;
        while i + 4 <= m {
            let arow0 = &a[i * k + kb..i * k + ke];
            let arow1 = &a[(i + 1) * k + kb..(i + 1) * k + ke];
            let arow2 = &a[(i + 2) * k + kb..(i + 2) * k + ke];
            let arow3 = &a[(i + 3) * k + kb..(i + 3) * k + ke];
            let (pair01, pair23) = c[i * n..(i + 4) * n].split_at_mut(2 * n);
            let (crow0, crow1) = pair01.split_at_mut(n);
            let (crow2, crow3) = pair23.split_at_mut(n);
            let mut j = 0;
            // Double-width tiles only for 4-byte elements: 16 accumulator
            // vectors fit the register file there, 8-byte elements spill.
            if std::mem::size_of::<T>() == 4 {
                while j + 2 * TILE <= n {
                    mm_tile4::<T, { 2 * TILE }>(
                        arow0,
                        arow1,
                        arow2,
                        arow3,
                        bblock,
                        n,
                        j,
                        &mut crow0[j..j + 2 * TILE],
                        &mut crow1[j..j + 2 * TILE],
                        &mut crow2[j..j + 2 * TILE],
                        &mut crow3[j..j + 2 * TILE],
                    );
                    j += 2 * TILE;
                }
            }
            while j + TILE <= n {
                mm_tile4::<T, TILE>(
                    arow0,
                    arow1,
                    arow2,
                    arow3,
                    bblock,
                    n,
                    j,
                    &mut crow0[j..j + TILE],
                    &mut crow1[j..j + TILE],
                    &mut crow2[j..j + TILE],
                    &mut crow3[j..j + TILE],
                );
                j += TILE;
            }
            while j + 8 <= n {
                mm_tile4::<T, 8>(
                    arow0,
                    arow1,
                    arow2,
                    arow3,
                    bblock,
                    n,
                    j,
                    &mut crow0[j..j + 8],
                    &mut crow1[j..j + 8],
                    &mut crow2[j..j + 8],
                    &mut crow3[j..j + 8],
                );
                j += 8;
            }
            if j < n {
                for (row, crow) in [(arow0, crow0), (arow1, crow1), (arow2, crow2), (arow3, crow3)]
                {
                    for (kk, &av) in row.iter().enumerate() {
                        for jj in j..n {
                            crow[jj] = av.mul_add(bblock[kk * n + jj], crow[jj]);
                        }
                    }
                }
            }
            i += 4;
        }
        while i + 2 <= m {
            let arow0 = &a[i * k + kb..i * k + ke];
            let arow1 = &a[(i + 1) * k + kb..(i + 1) * k + ke];
            let (crow0, crow1) = c[i * n..(i + 2) * n].split_at_mut(n);
            let mut j = 0;
            while j + TILE <= n {
                mm_tile2::<T, TILE>(
                    arow0,
                    arow1,
                    bblock,
                    n,
                    j,
                    &mut crow0[j..j + TILE],
                    &mut crow1[j..j + TILE],
                );
                j += TILE;
            }
            while j + 8 <= n {
                mm_tile2::<T, 8>(
                    arow0,
                    arow1,
                    bblock,
                    n,
                    j,
                    &mut crow0[j..j + 8],
                    &mut crow1[j..j + 8],
                );
                j += 8;
            }
            if j < n {
                for (kk, &av) in arow0.iter().enumerate() {
                    for jj in j..n {
                        crow0[jj] = av.mul_add(bblock[kk * n + jj], crow0[jj]);
                    }
                }
                for (kk, &av) in arow1.iter().enumerate() {
                    for jj in j..n {
                        crow1[jj] = av.mul_add(bblock[kk * n + jj], crow1[jj]);
                    }
                }
            }
            i += 2;
        }
        if i < m {
            let arow = &a[i * k + kb..i * k + ke];
            let crow = &mut c[i * n..(i + 1) * n];
            let mut j = 0;
            while j + TILE <= n {
                mm_tile::<T, TILE>(arow, bblock, n, j, &mut crow[j..j + TILE]);
                j += TILE;
            }
            while j + 8 <= n {
                mm_tile::<T, 8>(arow, bblock, n, j, &mut crow[j..j + 8]);
                j += 8;
            }
            if j < n {
                for (kk, &av) in arow.iter().enumerate() {
                    for jj in j..n {
                        crow[jj] = av.mul_add(bblock[kk * n + jj], crow[jj]);
                    }
                }
            }
        }
        kb = ke;
    }
}

/// C = Aᵀ @ B with A(k,m), B(k,n): the weight-gradient shape.
pub fn matmul_at<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let at = transpose(a, k, m);
    matmul(&at, b, m, k, n)
}

/// C = A @ Bᵀ with A(m,k), B(n,k).  Transposes whichever operand is smaller;
/// both branches add in ascending-k order, so they agree bit for bit.
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    if m <= n {
        let at = transpose(a, m, k);
        let ct = matmul(b, &at, n, k, m);
        transpose(&ct, n, m)
    } else {
        let bt = transpose(b, n, k);
        matmul(a, &bt, m, k, n)
    }
}

pub fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    transpose_into(a, m, n, &mut out);
    out
}

/// out(n,m) = a(m,n)ᵀ, blocked so both sides stay cache-resident.
fn transpose_into<T: Real>(a: &[T], m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(out.len(), m * n);
    const B: usize = 32;
    let mut i0 = 0;
    while i0 < m {
        let i1 = (i0 + B).min(m);
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + B).min(n);
            for i in i0..i1 {
                for j in j0..j1 {
                    out[j * m + i] = a[i * n + j];
                }
            }
            j0 = j1;
        }
        i0 = i1;
    }
}

/// Valid cross-correlation geometry shared by the conv op family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    pub fn oh(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn ow(&self) -> usize {
        self.w - self.kw + 1
    }
    /// Patch length: one im2col row.
    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    /// Output positions per sample.
    pub fn sites(&self) -> usize {
        self.oh() * self.ow()
    }
}

/// Unfolds one sample (cin,h,w) into rows of shape (sites, patch).
fn im2col<T: Real>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let (oh, ow, kw) = (d.oh(), d.ow(), d.kw);
    let patch = d.patch();
    for i in 0..oh {
        for j in 0..ow {
            let row = &mut cols[(i * ow + j) * patch..(i * ow + j + 1) * patch];
            for c in 0..d.cin {
                for p in 0..d.kh {
                    let src = (c * d.h + i + p) * d.w + j;
                    let dst = (c * d.kh + p) * kw;
                    row[dst..dst + kw].copy_from_slice(&x[src..src + kw]);
                }
            }
        }
    }
}

/// Folds per-patch gradients back onto the input, accumulating overlaps.
fn col2im_acc<T: Real>(cols: &[T], d: &ConvDims, dx: &mut [T]) {
    let (oh, ow, kw) = (d.oh(), d.ow(), d.kw);
    let patch = d.patch();
    for i in 0..oh {
        for j in 0..ow {
            let row = &cols[(i * ow + j) * patch..(i * ow + j + 1) * patch];
            for c in 0..d.cin {
                for p in 0..d.kh {
                    let dst = (c * d.h + i + p) * d.w + j;
                    let src = (c * d.kh + p) * kw;
                    for q in 0..kw {
                        dx[dst + q] += row[src + q];
                    }
                }
            }
        }
    }
}

/// Unfolds the whole batch into (batch·sites, patch); one big matmul operand.
fn im2col_batch<T: Real>(x: &[T], d: &ConvDims) -> Vec<T> {
    let (sites, patch) = (d.sites(), d.patch());
    let mut cols = vec![T::zero(); d.batch * sites * patch];
    for b in 0..d.batch {
        im2col(
            &x[b * d.cin * d.h * d.w..],
            d,
            &mut cols[b * sites * patch..(b + 1) * sites * patch],
        );
    }
    cols
}

/// y[b,o,i,j] = sum over c,p,q of x[b,c,i+p,j+q] * k[o,c,p,q].
pub fn conv2d<T: Real>(x: &[T], kernel: &[T], d: &ConvDims) -> Vec<T> {
    let (sites, patch) = (d.sites(), d.patch());
    let cols = im2col_batch(x, d);
    let kt = transpose(kernel, d.cout, patch);
    // (batch·sites, patch) @ (patch, cout): every sample in one matmul, then
    // each result block is re-laid channel-major.
    let site_major = matmul(&cols, &kt, d.batch * sites, patch, d.cout);
    let mut out = vec![T::zero(); d.batch * d.cout * sites];
    for b in 0..d.batch {
        transpose_into(
            &site_major[b * sites * d.cout..(b + 1) * sites * d.cout],
            sites,
            d.cout,
            &mut out[b * d.cout * sites..(b + 1) * d.cout * sites],
        );
    }
    out
}

/// dX[b,c,u,v] = sum over o,p,q of u[b,o,u-p,v-q] * k[o,c,p,q].
pub fn conv2d_vjp_input<T: Real>(u: &[T], kernel: &[T], d: &ConvDims) -> Vec<T> {
    let (sites, patch) = (d.sites(), d.patch());
    // dcols(batch·sites, patch) = Uᵀ-per-sample (batch·sites, cout) @ K(cout, patch)
    let mut ut = vec![T::zero(); d.batch * sites * d.cout];
    for b in 0..d.batch {
        transpose_into(
            &u[b * d.cout * sites..(b + 1) * d.cout * sites],
            d.cout,
            sites,
            &mut ut[b * sites * d.cout..(b + 1) * sites * d.cout],
        );
    }
    let dcols = matmul(&ut, kernel, d.batch * sites, d.cout, patch);
    let mut dx = vec![T::zero(); d.batch * d.cin * d.h * d.w];
    for b in 0..d.batch {
        col2im_acc(
            &dcols[b * sites * patch..(b + 1) * sites * patch],
            d,
            &mut dx[b * d.cin * d.h * d.w..(b + 1) * d.cin * d.h * d.w],
        );
    }
    dx
}

/// dK[o,c,p,q] = sum over b,i,j of u[b,o,i,j] * x[b,c,i+p,j+q].
pub fn conv2d_vjp_kernel<T: Real>(u: &[T], x: &[T], d: &ConvDims) -> Vec<T> {
    let (sites, patch) = (d.sites(), d.patch());
    let cols = im2col_batch(x, d);
    // Gather each channel's site rows across the batch so the whole sum is
    // one (cout, batch·sites) @ (batch·sites, patch) product; the k order
    // stays (sample, site) ascending.
    let mut ug = vec![T::zero(); d.cout * d.batch * sites];
    for b in 0..d.batch {
        for o in 0..d.cout {
            let src = &u[(b * d.cout + o) * sites..(b * d.cout + o + 1) * sites];
            ug[o * d.batch * sites + b * sites..o * d.batch * sites + (b + 1) * sites]
                .copy_from_slice(src);
        }
    }
    matmul(&ug, &cols, d.cout, d.batch * sites, patch)
}

pub fn gather_flat<T: Real>(x: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| x[i]).collect()
}

pub fn scatter_add_flat<T: Real>(x: &[T], idx: &[usize], out_numel: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), idx.len());
    let mut out = vec![T::zero(); out_numel];
    for (&v, &i) in x.iter().zip(idx) {
        out[i] += v;
    }
    out
}

pub fn channel_sum<T: Real>(x: &[T], batch: usize, ch: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); ch];
    for b in 0..batch {
        for c in 0..ch {
            let plane = &x[(b * ch + c) * hw..(b * ch + c + 1) * hw];
            let mut s = T::zero();
            for &v in plane {
                s += v;
            }
            out[c] += s;
        }
    }
    out
}

pub fn broadcast_channel<T: Real>(bias: &[T], batch: usize, ch: usize, hw: usize) -> Vec<T> {
    debug_assert_eq!(bias.len(), ch);
    let mut out = vec![T::zero(); batch * ch * hw];
    for b in 0..batch {
        for (c, &v) in bias.iter().enumerate() {
            out[(b * ch + c) * hw..(b * ch + c + 1) * hw].fill(v);
        }
    }
    out
}

pub fn sum_all<T: Real>(x: &[T]) -> T {
    let mut s = T::zero();
    for &v in x {
        s += v;
    }
    s
}
