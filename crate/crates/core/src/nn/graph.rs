//! Tape-based reverse-mode differentiation over dense f64 tensors.
//!
//! A [`Graph`] records one forward pass. Operations append nodes and return
//! [`NodeId`]s; [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every node, including leaves holding trainable parameters.

use super::tensor::Tensor;

pub type NodeId = usize;

/// Log-input floor for cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

/// Output extent and leading pad for one spatial axis.
fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => {
            assert!(input >= kernel, "valid conv needs input >= kernel");
            ((input - kernel) / stride + 1, 0)
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (out, total / 2)
        }
    }
}

type BackFn = Box<dyn Fn(&[Tensor], &Tensor, &[f64]) -> Vec<(NodeId, Vec<f64>)>>;

pub struct Graph {
    values: Vec<Tensor>,
    backs: Vec<Option<BackFn>>,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            backs: Vec::new(),
        }
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, None)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>) -> NodeId {
        self.values.push(value);
        self.backs.push(back);
        self.values.len() - 1
    }

    /// Reverse pass from a scalar loss node. Gradient accumulation order is
    /// fixed by node creation order, so results are bitwise reproducible.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.values[loss].len(), 1, "backward requires a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let Some(back) = &self.backs[id] else { continue };
            for (parent, contrib) in back(&self.values, &self.values[id], &g) {
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot => *slot = Some(contrib),
                }
            }
        }
        Gradients { grads }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a].shape(),
            self.values[b].shape(),
            "add shape mismatch: {:?} vs {:?}",
            self.values[a].shape(),
            self.values[b].shape()
        );
        let data = self.values[a]
            .data()
            .iter()
            .zip(self.values[b].data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.values[a].shape().to_vec(), data);
        self.push(
            out,
            Some(Box::new(move |_, _, g| {
                vec![(a, g.to_vec()), (b, g.to_vec())]
            })),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.values[a].shape(), self.values[b].shape(), "mul shape mismatch");
        let data = self.values[a]
            .data()
            .iter()
            .zip(self.values[b].data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.values[a].shape().to_vec(), data);
        self.push(
            out,
            Some(Box::new(move |vals, _, g| {
                let da = vals[b].data().iter().zip(g).map(|(y, gi)| y * gi).collect();
                let db = vals[a].data().iter().zip(g).map(|(x, gi)| x * gi).collect();
                vec![(a, da), (b, db)]
            })),
        )
    }

    /// Weighted sum against constant coefficients, yielding a scalar; the
    /// standard way to reduce any node to a loss.
    pub fn dot(&mut self, x: NodeId, coeffs: Vec<f64>) -> NodeId {
        assert_eq!(
            self.values[x].len(),
            coeffs.len(),
            "dot requires one coefficient per element"
        );
        let value: f64 = self.values[x].data().iter().zip(&coeffs).map(|(v, c)| v * c).sum();
        self.push(
            Tensor::scalar(value),
            Some(Box::new(move |_, _, g| {
                vec![(x, coeffs.iter().map(|c| c * g[0]).collect())]
            })),
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.values[x].data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(self.values[x].shape().to_vec(), data);
        self.push(
            out,
            Some(Box::new(move |vals, _, g| {
                let dx = vals[x]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(v, gi)| if *v > 0.0 { *gi } else { 0.0 })
                    .collect();
                vec![(x, dx)]
            })),
        )
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.values[x]
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let out = Tensor::new(self.values[x].shape().to_vec(), data);
        self.push(
            out,
            Some(Box::new(move |_, own, g| {
                let dx = own
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, gi)| y * (1.0 - y) * gi)
                    .collect();
                vec![(x, dx)]
            })),
        )
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.values[x].data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::new(self.values[x].shape().to_vec(), data);
        self.push(
            out,
            Some(Box::new(move |_, own, g| {
                let dx = own
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, gi)| (1.0 - y * y) * gi)
                    .collect();
                vec![(x, dx)]
            })),
        )
    }

    // ---- linear algebra ----

    /// `a` is `[m, k]`, `b` is `[k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.values[a].shape(), self.values[b].shape());
        assert_eq!(sa.len(), 2, "matmul lhs must be rank 2, got {:?}", sa);
        assert_eq!(sb.len(), 2, "matmul rhs must be rank 2, got {:?}", sb);
        assert_eq!(sa[1], sb[0], "matmul inner dims differ: {:?} vs {:?}", sa, sb);
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        {
            let ad = self.values[a].data();
            let bd = self.values[b].data();
            for i in 0..m {
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    let orow = &mut data[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += av * brow[j];
                    }
                }
            }
        }
        let out = Tensor::new(vec![m, n], data);
        self.push(
            out,
            Some(Box::new(move |vals, _, g| {
                let ad = vals[a].data();
                let bd = vals[b].data();
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        da[i * k + p] = acc;
                        let av = ad[i * k + p];
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for j in 0..n {
                            dbrow[j] += av * grow[j];
                        }
                    }
                }
                vec![(a, da), (b, db)]
            })),
        )
    }

    /// Broadcast-add `bias` (shape `[c]`) over the last axis of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let c = *self.values[x].shape().last().expect("add_bias on scalar");
        assert_eq!(
            self.values[bias].shape(),
            &[c],
            "bias shape {:?} does not match channel count {}",
            self.values[bias].shape(),
            c
        );
        let bd = self.values[bias].data().to_vec();
        let data = self.values[x]
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % c])
            .collect();
        let out = Tensor::new(self.values[x].shape().to_vec(), data);
        self.push(
            out,
            Some(Box::new(move |_, _, g| {
                let mut db = vec![0.0; c];
                for (i, gi) in g.iter().enumerate() {
                    db[i % c] += gi;
                }
                vec![(x, g.to_vec()), (bias, db)]
            })),
        )
    }

    /// Row gather from a rank-2 tensor; backward scatter-adds.
    pub fn gather_rows(&mut self, x: NodeId, rows: Vec<usize>) -> NodeId {
        let shape = self.values[x].shape();
        assert_eq!(shape.len(), 2, "gather_rows needs rank 2");
        let (m, d) = (shape[0], shape[1]);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            assert!(r < m, "row {} out of bounds {}", r, m);
            data.extend_from_slice(&self.values[x].data()[r * d..(r + 1) * d]);
        }
        let out = Tensor::new(vec![rows.len(), d], data);
        self.push(
            out,
            Some(Box::new(move |_, _, g| {
                let mut dx = vec![0.0; m * d];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..d {
                        dx[r * d + j] += g[i * d + j];
                    }
                }
                vec![(x, dx)]
            })),
        )
    }

    // ---- convolution ----

    /// Cross-correlation of `x` (NHWC) with `kernel` (`[kh, kw, in_c, out_c]`).
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, stride: usize, padding: Padding) -> NodeId {
        assert!(stride >= 1);
        let xs = self.values[x].shape().to_vec();
        let ks = self.values[kernel].shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d input must be NHWC, got {:?}", xs);
        assert_eq!(ks.len(), 4, "conv2d kernel must be [kh,kw,ic,oc], got {:?}", ks);
        assert_eq!(
            xs[3], ks[2],
            "conv2d channel mismatch: input {:?} vs kernel {:?}",
            xs, ks
        );
        let (n, h, w, ic) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw, _, oc) = (ks[0], ks[1], ks[2], ks[3]);
        let (oh, pad_y) = conv_extent(h, kh, stride, padding);
        let (ow, pad_x) = conv_extent(w, kw, stride, padding);
        let mut data = vec![0.0; n * oh * ow * oc];
        {
            let xd = self.values[x].data();
            let kd = self.values[kernel].data();
            for bn in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let orow =
                            &mut data[((bn * oh + oy) * ow + ox) * oc..((bn * oh + oy) * ow + ox + 1) * oc];
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad_y as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad_x as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                let xbase = ((bn * h + iy as usize) * w + ix as usize) * ic;
                                let kbase = (ky * kw + kx) * ic * oc;
                                for ci in 0..ic {
                                    let xv = xd[xbase + ci];
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let krow = &kd[kbase + ci * oc..kbase + (ci + 1) * oc];
                                    for co in 0..oc {
                                        orow[co] += xv * krow[co];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, oh, ow, oc], data);
        self.push(
            out,
            Some(Box::new(move |vals, _, g| {
                let xd = vals[x].data();
                let kd = vals[kernel].data();
                let mut dx = vec![0.0; xd.len()];
                let mut dk = vec![0.0; kd.len()];
                for bn in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let grow = &g[((bn * oh + oy) * ow + ox) * oc
                                ..((bn * oh + oy) * ow + ox + 1) * oc];
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad_y as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad_x as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    let xbase = ((bn * h + iy as usize) * w + ix as usize) * ic;
                                    let kbase = (ky * kw + kx) * ic * oc;
                                    for ci in 0..ic {
                                        let xv = xd[xbase + ci];
                                        let krow = &kd[kbase + ci * oc..kbase + (ci + 1) * oc];
                                        let dkrow = &mut dk[kbase + ci * oc..kbase + (ci + 1) * oc];
                                        let mut acc = 0.0;
                                        for co in 0..oc {
                                            let gv = grow[co];
                                            acc += gv * krow[co];
                                            dkrow[co] += gv * xv;
                                        }
                                        dx[xbase + ci] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(x, dx), (kernel, dk)]
            })),
        )
    }

    /// Per-channel convolution with `kernel` of shape `[kh, kw, c]`.
    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: Padding,
    ) -> NodeId {
        assert!(stride >= 1);
        let xs = self.values[x].shape().to_vec();
        let ks = self.values[kernel].shape().to_vec();
        assert_eq!(xs.len(), 4, "depthwise input must be NHWC");
        assert_eq!(ks.len(), 3, "depthwise kernel must be [kh,kw,c], got {:?}", ks);
        assert_eq!(
            xs[3], ks[2],
            "depthwise channel mismatch: input {:?} vs kernel {:?}",
            xs, ks
        );
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw) = (ks[0], ks[1]);
        let (oh, pad_y) = conv_extent(h, kh, stride, padding);
        let (ow, pad_x) = conv_extent(w, kw, stride, padding);
        let mut data = vec![0.0; n * oh * ow * c];
        {
            let xd = self.values[x].data();
            let kd = self.values[kernel].data();
            for bn in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let obase = ((bn * oh + oy) * ow + ox) * c;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad_y as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad_x as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                let xbase = ((bn * h + iy as usize) * w + ix as usize) * c;
                                let kbase = (ky * kw + kx) * c;
                                for ci in 0..c {
                                    data[obase + ci] += xd[xbase + ci] * kd[kbase + ci];
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, oh, ow, c], data);
        self.push(
            out,
            Some(Box::new(move |vals, _, g| {
                let xd = vals[x].data();
                let kd = vals[kernel].data();
                let mut dx = vec![0.0; xd.len()];
                let mut dk = vec![0.0; kd.len()];
                for bn in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let obase = ((bn * oh + oy) * ow + ox) * c;
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad_y as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad_x as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    let xbase = ((bn * h + iy as usize) * w + ix as usize) * c;
                                    let kbase = (ky * kw + kx) * c;
                                    for ci in 0..c {
                                        let gv = g[obase + ci];
                                        dx[xbase + ci] += gv * kd[kbase + ci];
                                        dk[kbase + ci] += gv * xd[xbase + ci];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![(x, dx), (kernel, dk)]
            })),
        )
    }

    /// Channel-axis concatenation of NHWC tensors with equal spatial dims.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> NodeId {
        assert!(!inputs.is_empty());
        let first = self.values[inputs[0]].shape().to_vec();
        assert_eq!(first.len(), 4);
        let (n, h, w) = (first[0], first[1], first[2]);
        let mut channels = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let s = self.values[id].shape();
            assert_eq!(
                &s[..3],
                &[n, h, w][..],
                "concat spatial mismatch: {:?} vs {:?}",
                s,
                first
            );
            channels.push(s[3]);
        }
        let total_c: usize = channels.iter().sum();
        let mut data = vec![0.0; n * h * w * total_c];
        let mut offset = 0;
        for (idx, &id) in inputs.iter().enumerate() {
            let c = channels[idx];
            let src = self.values[id].data();
            for pix in 0..n * h * w {
                data[pix * total_c + offset..pix * total_c + offset + c]
                    .copy_from_slice(&src[pix * c..(pix + 1) * c]);
            }
            offset += c;
        }
        let out = Tensor::new(vec![n, h, w, total_c], data);
        let ids = inputs.to_vec();
        self.push(
            out,
            Some(Box::new(move |_, _, g| {
                let mut result = Vec::with_capacity(ids.len());
                let mut offset = 0;
                for (idx, &id) in ids.iter().enumerate() {
                    let c = channels[idx];
                    let mut dg = vec![0.0; n * h * w * c];
                    for pix in 0..n * h * w {
                        dg[pix * c..(pix + 1) * c].copy_from_slice(
                            &g[pix * total_c + offset..pix * total_c + offset + c],
                        );
                    }
                    result.push((id, dg));
                    offset += c;
                }
                result
            })),
        )
    }

    /// Spatial mean: `[n, h, w, c]` -> `[n, c]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xs = self.values[x].shape().to_vec();
        assert_eq!(xs.len(), 4);
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let area = (h * w) as f64;
        let mut data = vec![0.0; n * c];
        {
            let xd = self.values[x].data();
            for bn in 0..n {
                for pix in 0..h * w {
                    let base = (bn * h * w + pix) * c;
                    for ci in 0..c {
                        data[bn * c + ci] += xd[base + ci];
                    }
                }
            }
            for v in &mut data {
                *v /= area;
            }
        }
        let out = Tensor::new(vec![n, c], data);
        self.push(
            out,
            Some(Box::new(move |_, _, g| {
                let mut dx = vec![0.0; n * h * w * c];
                for bn in 0..n {
                    for pix in 0..h * w {
                        let base = (bn * h * w + pix) * c;
                        for ci in 0..c {
                            dx[base + ci] = g[bn * c + ci] / area;
                        }
                    }
                }
                vec![(x, dx)]
            })),
        )
    }

    // ---- normalization ----

    /// Train-mode batch normalization over the channel axis of NHWC input.
    /// Returns the output node plus the biased batch mean/variance per channel
    /// so the caller can fold them into running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> (NodeId, Vec<f64>, Vec<f64>) {
        let xs = self.values[x].shape().to_vec();
        assert_eq!(xs.len(), 4, "batch_norm expects NHWC");
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let m = n * h * w;
        assert!(m > 0, "batch_norm on empty batch");
        assert_eq!(self.values[gamma].shape(), &[c]);
        assert_eq!(self.values[beta].shape(), &[c]);
        let xd = self.values[x].data();
        let mut mean = vec![0.0; c];
        for pix in 0..m {
            for ci in 0..c {
                mean[ci] += xd[pix * c + ci];
            }
        }
        for v in &mut mean {
            *v /= m as f64;
        }
        let mut var = vec![0.0; c];
        for pix in 0..m {
            for ci in 0..c {
                let d = xd[pix * c + ci] - mean[ci];
                var[ci] += d * d;
            }
        }
        for v in &mut var {
            *v /= m as f64;
        }
        let istd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = self.values[gamma].data();
        let bd = self.values[beta].data();
        let mut data = vec![0.0; m * c];
        for pix in 0..m {
            for ci in 0..c {
                let xhat = (xd[pix * c + ci] - mean[ci]) * istd[ci];
                data[pix * c + ci] = gd[ci] * xhat + bd[ci];
            }
        }
        let out = Tensor::new(xs.clone(), data);
        let mean_c = mean.clone();
        let istd_c = istd.clone();
        let id = self.push(
            out,
            Some(Box::new(move |vals, _, g| {
                let xd = vals[x].data();
                let gd = vals[gamma].data();
                let mf = m as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for pix in 0..m {
                    for ci in 0..c {
                        let xhat = (xd[pix * c + ci] - mean_c[ci]) * istd_c[ci];
                        let gi = g[pix * c + ci];
                        dgamma[ci] += gi * xhat;
                        dbeta[ci] += gi;
                        let dxhat = gi * gd[ci];
                        sum_dxhat[ci] += dxhat;
                        sum_dxhat_xhat[ci] += dxhat * xhat;
                    }
                }
                let mut dx = vec![0.0; m * c];
                for pix in 0..m {
                    for ci in 0..c {
                        let xhat = (xd[pix * c + ci] - mean_c[ci]) * istd_c[ci];
                        let dxhat = g[pix * c + ci] * gd[ci];
                        dx[pix * c + ci] = istd_c[ci] / mf
                            * (mf * dxhat - sum_dxhat[ci] - xhat * sum_dxhat_xhat[ci]);
                    }
                }
                vec![(x, dx), (gamma, dgamma), (beta, dbeta)]
            })),
        );
        (id, mean, var)
    }

    /// Eval-mode batch normalization using frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> NodeId {
        let xs = self.values[x].shape().to_vec();
        assert_eq!(xs.len(), 4, "batch_norm expects NHWC");
        let c = xs[3];
        assert_eq!(running_mean.len(), c);
        assert_eq!(running_var.len(), c);
        let istd: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let gd = self.values[gamma].data();
        let bd = self.values[beta].data();
        let data = self.values[x]
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ci = i % c;
                gd[ci] * (v - mean[ci]) * istd[ci] + bd[ci]
            })
            .collect();
        let out = Tensor::new(xs, data);
        self.push(
            out,
            Some(Box::new(move |vals, _, g| {
                let xd = vals[x].data();
                let gd = vals[gamma].data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; xd.len()];
                for (i, gi) in g.iter().enumerate() {
                    let ci = i % c;
                    dgamma[ci] += gi * (xd[i] - mean[ci]) * istd[ci];
                    dbeta[ci] += gi;
                    dx[i] = gi * gd[ci] * istd[ci];
                }
                vec![(x, dx), (gamma, dgamma), (beta, dbeta)]
            })),
        )
    }

    // ---- classification head ----

    /// Row-wise softmax of `[n, k]` logits.
    pub fn softmax(&mut self, logits: NodeId) -> NodeId {
        let shape = self.values[logits].shape().to_vec();
        assert_eq!(shape.len(), 2, "softmax expects [n, k] logits");
        let (n, k) = (shape[0], shape[1]);
        let xd = self.values[logits].data();
        let mut data = vec![0.0; n * k];
        for i in 0..n {
            let row = &xd[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..k {
                let e = (row[j] - max).exp();
                data[i * k + j] = e;
                sum += e;
            }
            for j in 0..k {
                data[i * k + j] /= sum;
            }
        }
        let out = Tensor::new(shape, data);
        self.push(
            out,
            Some(Box::new(move |_, own, g| {
                let y = own.data();
                let mut dx = vec![0.0; n * k];
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..k {
                        dot += g[i * k + j] * y[i * k + j];
                    }
                    for j in 0..k {
                        dx[i * k + j] = y[i * k + j] * (g[i * k + j] - dot);
                    }
                }
                vec![(logits, dx)]
            })),
        )
    }

    /// Batch-mean weighted cross-entropy over probabilities:
    /// `-mean_i w_i * ln(max(p[i, label_i], 1e-12))`.
    pub fn weighted_cross_entropy(
        &mut self,
        probs: NodeId,
        labels: &[usize],
        weights: &[f64],
    ) -> NodeId {
        let shape = self.values[probs].shape().to_vec();
        assert_eq!(shape.len(), 2);
        let (n, k) = (shape[0], shape[1]);
        assert_eq!(labels.len(), n, "one label per row required");
        assert_eq!(weights.len(), n, "one weight per row required");
        assert!(weights.iter().all(|w| *w > 0.0), "class weights must be positive");
        let pd = self.values[probs].data();
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            assert!(label < k, "label {} out of range {}", label, k);
            loss -= weights[i] * pd[i * k + label].max(LOG_FLOOR).ln();
        }
        loss /= n as f64;
        let labels = labels.to_vec();
        let weights = weights.to_vec();
        self.push(
            Tensor::scalar(loss),
            Some(Box::new(move |vals, _, g| {
                let pd = vals[probs].data();
                let scale = g[0] / n as f64;
                let mut dp = vec![0.0; n * k];
                for (i, &label) in labels.iter().enumerate() {
                    let p = pd[i * k + label];
                    if p > LOG_FLOOR {
                        dp[i * k + label] = -weights[i] / p * scale;
                    }
                }
                vec![(probs, dp)]
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(
            vec![1, 2, 2, 1],
            vec![1.0, 2.0, 3.0, 4.0],
        ));
        let k = g.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]));
        let y = g.conv2d(x, k, 1, Padding::Same);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_ones_kernel_on_constant_sums_taps() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::filled(vec![1, 5, 5, 1], 2.0));
        let k = g.leaf(Tensor::filled(vec![3, 3, 1, 1], 1.0));
        let y = g.conv2d(x, k, 1, Padding::Same);
        // interior outputs see all nine taps
        assert_eq!(g.value(y).at4(0, 2, 2, 0), 18.0);
        // corner sees four taps under same padding
        assert_eq!(g.value(y).at4(0, 0, 0, 0), 8.0);
    }

    #[test]
    fn same_padding_dims() {
        assert_eq!(conv_extent(16, 3, 1, Padding::Same), (16, 1));
        assert_eq!(conv_extent(71, 3, 2, Padding::Same), (36, 1));
        assert_eq!(conv_extent(5, 3, 1, Padding::Valid), (3, 0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 100.0, 100.0, 100.0]));
        let y = g.softmax(x);
        for i in 0..2 {
            let row: f64 = g.value(y).data()[i * 3..(i + 1) * 3].iter().sum();
            assert!((row - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_closed_forms() {
        // perfect prediction -> zero loss
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]));
        let loss = g.weighted_cross_entropy(p, &[0], &[4.2]);
        assert_eq!(g.value(loss).data()[0], 0.0);

        // uniform prediction with weight 1 -> ln 3
        let mut g = Graph::new();
        let third = 1.0 / 3.0;
        let p = g.leaf(Tensor::new(vec![1, 3], vec![third, third, third]));
        let loss = g.weighted_cross_entropy(p, &[1], &[1.0]);
        assert!((g.value(loss).data()[0] - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_ratio_tracks_class_weights() {
        let third = 1.0 / 3.0;
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![1, 3], vec![third, third, third]));
        let l_others = g.weighted_cross_entropy(p, &[2], &[5.8830]);
        let l_ddos = g.weighted_cross_entropy(p, &[0], &[2.2367]);
        let ratio = g.value(l_others).data()[0] / g.value(l_ddos).data()[0];
        assert!((ratio - 2.6303).abs() < 1e-3);
    }

    #[test]
    fn backward_of_unused_leaf_is_absent() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(3.0));
        let unused = g.leaf(Tensor::scalar(7.0));
        let b = g.leaf(Tensor::scalar(4.0));
        let y = g.mul(a, b);
        let grads = g.backward(y);
        assert_eq!(grads.get(a), Some(&[4.0][..]));
        assert_eq!(grads.get(b), Some(&[3.0][..]));
        assert_eq!(grads.get(unused), None);
    }

    #[test]
    fn residual_add_passes_identity_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]));
        let zero_k = g.leaf(Tensor::zeros(vec![1, 1, 1, 1]));
        let main = g.conv2d(x, zero_k, 1, Padding::Same);
        let y = g.add(main, x);
        // zero main path -> output equals input
        assert_eq!(g.value(y).data(), g.value(x).data());
    }
}
