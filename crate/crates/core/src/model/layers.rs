//! Differentiable primitives over single-sample channel-major feature maps.
//!
//! Every layer keeps only parameter indices; values and gradients live in a
//! [`Parameters`]/[`Gradients`] pair so that a network, its gradients and its
//! optimizer state share one flat layout.

use crate::scalar::Scalar;

/// `depth x side x side` activations stored as `[channel][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub depth: usize,
    pub side: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(depth: usize, side: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), depth * side * side, "feature map length");
        Self { depth, side, data }
    }

    pub fn zeros(depth: usize, side: usize) -> Self {
        Self::new(depth, side, vec![T::zero(); depth * side * side])
    }

    pub fn plane(&self) -> usize {
        self.side * self.side
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.side, self.depth)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// Flat, name-addressable parameter storage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters<T> {
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Scalar> Parameters<T> {
    pub fn new() -> Self {
        Self { tensors: Vec::new() }
    }

    pub fn push(&mut self, name: String, shape: Vec<usize>, values: Vec<T>) -> usize {
        assert_eq!(values.len(), shape.iter().product::<usize>());
        self.tensors.push(ParamTensor {
            name,
            shape,
            values,
        });
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }

    #[inline]
    pub fn values(&self, idx: usize) -> &[T] {
        &self.tensors[idx].values
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }
}

/// Gradient buffers laid out like a [`Parameters`] store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &Parameters<T>) -> Self {
        Self {
            values: params
                .tensors()
                .iter()
                .map(|t| vec![T::zero(); t.values.len()])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for v in self.values.iter_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// Square convolution, stride 1, zero "same" padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub in_depth: usize,
    pub out_depth: usize,
    pub kernel: usize,
}

fn im2col<T: Scalar>(x: &FeatureMap<T>, k: usize) -> Vec<T> {
    let s = x.side;
    let pad = k / 2;
    let n = x.plane();
    let mut col = vec![T::zero(); x.depth * k * k * n];
    for c in 0..x.depth {
        let src = x.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for y in 0..s {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= s as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    // Destination x range whose source column is in bounds.
                    let x_lo = pad.saturating_sub(kx);
                    let x_hi = (s + pad).saturating_sub(kx).min(s);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let sx_lo = x_lo + kx - pad;
                    let len = x_hi - x_lo;
                    dst[y * s + x_lo..y * s + x_hi]
                        .copy_from_slice(&src[sy * s + sx_lo..sy * s + sx_lo + len]);
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], depth: usize, side: usize, k: usize) -> FeatureMap<T> {
    let s = side;
    let pad = k / 2;
    let n = s * s;
    let mut out = FeatureMap::zeros(depth, side);
    for c in 0..depth {
        let dst = &mut out.data[c * n..(c + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                for y in 0..s {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= s as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = pad.saturating_sub(kx);
                    let x_hi = (s + pad).saturating_sub(kx).min(s);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let sx_lo = x_lo + kx - pad;
                    for (d, &v) in dst[sy * s + sx_lo..sy * s + sx_lo + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&src[y * s + x_lo..y * s + x_hi])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
    out
}

impl Conv2d {
    pub fn register<T: Scalar>(
        params: &mut Parameters<T>,
        prefix: &str,
        in_depth: usize,
        out_depth: usize,
        kernel: usize,
    ) -> Self {
        let w = in_depth * kernel * kernel * out_depth;
        let weight = params.push(
            format!("{prefix}.weight"),
            vec![out_depth, in_depth, kernel, kernel],
            vec![T::zero(); w],
        );
        let bias = params.push(format!("{prefix}.bias"), vec![out_depth], vec![T::zero(); out_depth]);
        Self {
            weight,
            bias,
            in_depth,
            out_depth,
            kernel,
        }
    }

    fn columns<'a, T: Scalar>(&self, x: &'a FeatureMap<T>) -> std::borrow::Cow<'a, [T]> {
        if self.kernel == 1 {
            std::borrow::Cow::Borrowed(&x.data)
        } else {
            std::borrow::Cow::Owned(im2col(x, self.kernel))
        }
    }

    pub fn forward<T: Scalar>(&self, params: &Parameters<T>, x: &FeatureMap<T>) -> FeatureMap<T> {
        debug_assert_eq!(x.depth, self.in_depth);
        let n = x.plane();
        let kk = self.in_depth * self.kernel * self.kernel;
        let col = self.columns(x);
        let bias = params.values(self.bias);
        let mut y = Vec::with_capacity(self.out_depth * n);
        for &b in bias {
            y.extend(std::iter::repeat_n(b, n));
        }
        T::gemm(
            self.out_depth,
            kk,
            n,
            T::one(),
            params.values(self.weight),
            false,
            &col,
            false,
            T::one(),
            &mut y,
        );
        FeatureMap::new(self.out_depth, x.side, y)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward<T: Scalar>(
        &self,
        params: &Parameters<T>,
        x: &FeatureMap<T>,
        dy: &FeatureMap<T>,
        grads: &mut Gradients<T>,
    ) -> FeatureMap<T> {
        let n = x.plane();
        let kk = self.in_depth * self.kernel * self.kernel;
        let col = self.columns(x);
        for (o, g) in grads.values[self.bias].iter_mut().enumerate() {
            *g += dy.data[o * n..(o + 1) * n].iter().copied().sum::<T>();
        }
        T::gemm(
            self.out_depth,
            n,
            kk,
            T::one(),
            &dy.data,
            false,
            &col,
            true,
            T::one(),
            &mut grads.values[self.weight],
        );
        let mut dcol = vec![T::zero(); kk * n];
        T::gemm(
            kk,
            self.out_depth,
            n,
            T::one(),
            params.values(self.weight),
            true,
            &dy.data,
            false,
            T::zero(),
            &mut dcol,
        );
        if self.kernel == 1 {
            FeatureMap::new(self.in_depth, x.side, dcol)
        } else {
            col2im(&dcol, self.in_depth, x.side, self.kernel)
        }
    }
}

/// 2x2 transposed convolution with stride 2 (doubles the side).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvTranspose2x2 {
    pub weight: usize,
    pub bias: usize,
    pub in_depth: usize,
    pub out_depth: usize,
}

impl ConvTranspose2x2 {
    pub fn register<T: Scalar>(
        params: &mut Parameters<T>,
        prefix: &str,
        in_depth: usize,
        out_depth: usize,
    ) -> Self {
        let weight = params.push(
            format!("{prefix}.weight"),
            vec![in_depth, out_depth, 2, 2],
            vec![T::zero(); in_depth * out_depth * 4],
        );
        let bias = params.push(format!("{prefix}.bias"), vec![out_depth], vec![T::zero(); out_depth]);
        Self {
            weight,
            bias,
            in_depth,
            out_depth,
        }
    }

    pub fn forward<T: Scalar>(&self, params: &Parameters<T>, x: &FeatureMap<T>) -> FeatureMap<T> {
        let n = x.plane();
        let s = x.side;
        let rows = self.out_depth * 4;
        // z[(o, a, b), pixel] = Σ_c w[c, (o, a, b)] x[c, pixel]
        let mut z = vec![T::zero(); rows * n];
        T::gemm(
            rows,
            self.in_depth,
            n,
            T::one(),
            params.values(self.weight),
            true,
            &x.data,
            false,
            T::zero(),
            &mut z,
        );
        let side = 2 * s;
        let mut y = FeatureMap::zeros(self.out_depth, side);
        let bias = params.values(self.bias);
        for o in 0..self.out_depth {
            for a in 0..2 {
                for b in 0..2 {
                    let zr = &z[(o * 4 + a * 2 + b) * n..(o * 4 + a * 2 + b + 1) * n];
                    for i in 0..s {
                        let dst_row = (o * side + 2 * i + a) * side;
                        for j in 0..s {
                            y.data[dst_row + 2 * j + b] = zr[i * s + j] + bias[o];
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &Parameters<T>,
        x: &FeatureMap<T>,
        dy: &FeatureMap<T>,
        grads: &mut Gradients<T>,
    ) -> FeatureMap<T> {
        let n = x.plane();
        let s = x.side;
        let side = 2 * s;
        let rows = self.out_depth * 4;
        let mut dz = vec![T::zero(); rows * n];
        for o in 0..self.out_depth {
            let mut bsum = T::zero();
            for a in 0..2 {
                for b in 0..2 {
                    let zr = &mut dz[(o * 4 + a * 2 + b) * n..(o * 4 + a * 2 + b + 1) * n];
                    for i in 0..s {
                        let src_row = (o * side + 2 * i + a) * side;
                        for j in 0..s {
                            let v = dy.data[src_row + 2 * j + b];
                            zr[i * s + j] = v;
                            bsum += v;
                        }
                    }
                }
            }
            grads.values[self.bias][o] += bsum;
        }
        T::gemm(
            self.in_depth,
            n,
            rows,
            T::one(),
            &x.data,
            false,
            &dz,
            true,
            T::one(),
            &mut grads.values[self.weight],
        );
        let mut dx = vec![T::zero(); self.in_depth * n];
        T::gemm(
            self.in_depth,
            rows,
            n,
            T::one(),
            params.values(self.weight),
            false,
            &dz,
            false,
            T::zero(),
            &mut dx,
        );
        FeatureMap::new(self.in_depth, s, dx)
    }
}

pub fn relu_in_place<T: Scalar>(x: &mut FeatureMap<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward_in_place<T: Scalar>(out: &FeatureMap<T>, grad: &mut FeatureMap<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling with stride 2; returns the pooled map and the winning
/// offset (0..4) of every output cell.
pub fn max_pool2<T: Scalar>(x: &FeatureMap<T>) -> (FeatureMap<T>, Vec<u8>) {
    let s = x.side;
    let h = s / 2;
    let mut out = FeatureMap::zeros(x.depth, h);
    let mut arg = vec![0u8; x.depth * h * h];
    for c in 0..x.depth {
        let src = x.channel(c);
        for i in 0..h {
            for j in 0..h {
                let cand = [
                    src[2 * i * s + 2 * j],
                    src[2 * i * s + 2 * j + 1],
                    src[(2 * i + 1) * s + 2 * j],
                    src[(2 * i + 1) * s + 2 * j + 1],
                ];
                let mut best = 0;
                for k in 1..4 {
                    if cand[k] > cand[best] {
                        best = k;
                    }
                }
                let o = (c * h + i) * h + j;
                out.data[o] = cand[best];
                arg[o] = best as u8;
            }
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the winning inputs, adding into `dx`.
pub fn max_pool2_backward<T: Scalar>(dpooled: &FeatureMap<T>, arg: &[u8], dx: &mut FeatureMap<T>) {
    let h = dpooled.side;
    let s = dx.side;
    for c in 0..dpooled.depth {
        for i in 0..h {
            for j in 0..h {
                let o = (c * h + i) * h + j;
                let k = arg[o] as usize;
                let (di, dj) = (k / 2, k % 2);
                dx.data[(c * s + 2 * i + di) * s + 2 * j + dj] += dpooled.data[o];
            }
        }
    }
}

/// Concatenates `x` with `copies - 1` copies of itself along depth.
pub fn repeat_depth<T: Scalar>(x: &FeatureMap<T>, copies: usize) -> FeatureMap<T> {
    let mut data = Vec::with_capacity(x.data.len() * copies);
    for _ in 0..copies {
        data.extend_from_slice(&x.data);
    }
    FeatureMap::new(x.depth * copies, x.side, data)
}

pub fn repeat_depth_backward<T: Scalar>(dy: &FeatureMap<T>, copies: usize) -> FeatureMap<T> {
    let len = dy.data.len() / copies;
    let mut dx = dy.data[..len].to_vec();
    for k in 1..copies {
        for (d, &v) in dx.iter_mut().zip(&dy.data[k * len..(k + 1) * len]) {
            *d += v;
        }
    }
    FeatureMap::new(dy.depth / copies, dy.side, dx)
}

pub fn concat_depth<T: Scalar>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> FeatureMap<T> {
    debug_assert_eq!(a.side, b.side);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    FeatureMap::new(a.depth + b.depth, a.side, data)
}

pub fn split_depth<T: Scalar>(x: FeatureMap<T>, first: usize) -> (FeatureMap<T>, FeatureMap<T>) {
    let cut = first * x.plane();
    let mut data = x.data;
    let tail = data.split_off(cut);
    (
        FeatureMap::new(first, x.side, data),
        FeatureMap::new(x.depth - first, x.side, tail),
    )
}

pub fn add_in_place<T: Scalar>(a: &mut FeatureMap<T>, b: &FeatureMap<T>) {
    debug_assert_eq!(a.data.len(), b.data.len());
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}
