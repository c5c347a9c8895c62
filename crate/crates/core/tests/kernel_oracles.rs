//! Independent naive-loop references for the convolution family and a
//! per-pixel bilinear interpolator; the graph kernels must agree with them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowimage::dataset::ClassLabel;
use flowimage::featurize::{bilinear_resize, ImageTensor, Resolution};
use flowimage::nn::{Graph, Padding, Tensor};

const TOL: f64 = 1e-10;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// TensorFlow-style padding extents: `out = ceil(in / stride)` for Same,
/// `out = floor((in - k) / stride) + 1` for Valid.
fn pad_and_out(inp: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = inp.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(inp);
            (out, total / 2)
        }
        Padding::Valid => ((inp - k) / stride + 1, 0),
    }
}

/// Plain quadruple-loop convolution on NHWC input and [kh, kw, ic, oc]
/// kernels; out-of-bounds taps read zero.
fn conv_reference(x: &Tensor, k: &Tensor, stride: usize, padding: Padding) -> Vec<f64> {
    let (n, h, w, ic) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, oc) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (oh, pad_y) = pad_and_out(h, kh, stride, padding);
    let (ow, pad_x) = pad_and_out(w, kw, stride, padding);
    let mut out = vec![0.0; n * oh * ow * oc];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..oc {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad_y as isize;
                            let ix = (ox * stride + kx) as isize - pad_x as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..ic {
                                let xv = x.data()
                                    [((b * h + iy as usize) * w + ix as usize) * ic + ci];
                                let kv = k.data()[((ky * kw + kx) * ic + ci) * oc + co];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * oc + co] = acc;
                }
            }
        }
    }
    out
}

/// Depthwise variant: one [kh, kw, c] filter slice per channel.
fn depthwise_reference(x: &Tensor, k: &Tensor, stride: usize, padding: Padding) -> Vec<f64> {
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = (k.shape()[0], k.shape()[1]);
    let (oh, pad_y) = pad_and_out(h, kh, stride, padding);
    let (ow, pad_x) = pad_and_out(w, kw, stride, padding);
    let mut out = vec![0.0; n * oh * ow * c];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad_y as isize;
                            let ix = (ox * stride + kx) as isize - pad_x as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x.data()[((b * h + iy as usize) * w + ix as usize) * c + ch]
                                * k.data()[(ky * kw + kx) * c + ch];
                        }
                    }
                    out[((b * oh + oy) * ow + ox) * c + ch] = acc;
                }
            }
        }
    }
    out
}

fn assert_close(got: &[f64], want: &[f64], what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length mismatch");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() < TOL, "{what} elem {i}: {g} vs {w}");
    }
}

#[test]
pub fn conv2d_matches_naive_loops() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(h, w, ic, oc, kh, stride, padding) in &[
            (8usize, 8usize, 4usize, 3usize, 3usize, 1usize, Padding::Same),
            (8, 8, 4, 2, 3, 2, Padding::Same),
            (7, 5, 3, 4, 3, 2, Padding::Same),
            (8, 8, 2, 2, 5, 2, Padding::Same),
            (8, 8, 4, 3, 3, 1, Padding::Valid),
            (6, 6, 2, 2, 1, 1, Padding::Same),
        ] {
            let x = random_tensor(&mut rng, &[2, h, w, ic]);
            let k = random_tensor(&mut rng, &[kh, kh, ic, oc]);
            let reference = conv_reference(&x, &k, stride, padding);
            let mut g = Graph::new();
            let xid = g.leaf(x);
            let kid = g.leaf(k);
            let y = g.conv2d(xid, kid, stride, padding);
            assert_close(
                g.value(y).data(),
                &reference,
                &format!("conv {h}x{w}x{ic}->{oc} k{kh} s{stride} {padding:?}"),
            );
        }
    }
}

#[test]
pub fn depthwise_conv2d_matches_naive_loops() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(h, w, c, stride) in &[(8usize, 8usize, 4usize, 1usize), (8, 8, 3, 2), (7, 7, 2, 2)] {
            let x = random_tensor(&mut rng, &[2, h, w, c]);
            let k = random_tensor(&mut rng, &[3, 3, c]);
            let reference = depthwise_reference(&x, &k, stride, Padding::Same);
            let mut g = Graph::new();
            let xid = g.leaf(x);
            let kid = g.leaf(k);
            let y = g.depthwise_conv2d(xid, kid, stride, Padding::Same);
            assert_close(
                g.value(y).data(),
                &reference,
                &format!("depthwise {h}x{w}x{c} s{stride}"),
            );
        }
    }
}

#[test]
pub fn separable_equals_depthwise_then_pointwise_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[1, 8, 8, 4]);
    let dk = random_tensor(&mut rng, &[3, 3, 4]);
    let pk = random_tensor(&mut rng, &[1, 1, 4, 3]);

    let dw = depthwise_reference(&x, &dk, 1, Padding::Same);
    let dw_t = Tensor::new(vec![1, 8, 8, 4], dw);
    let reference = conv_reference(&dw_t, &pk, 1, Padding::Same);

    let mut g = Graph::new();
    let xid = g.leaf(x);
    let dkid = g.leaf(dk);
    let pkid = g.leaf(pk);
    let mid = g.depthwise_conv2d(xid, dkid, 1, Padding::Same);
    let y = g.conv2d(mid, pkid, 1, Padding::Same);
    assert_close(g.value(y).data(), &reference, "separable");
}

#[test]
pub fn inception_concat_matches_branch_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, &[1, 8, 8, 4]);
    let k1 = random_tensor(&mut rng, &[1, 1, 4, 2]);
    let k3 = random_tensor(&mut rng, &[3, 3, 4, 2]);
    let k5 = random_tensor(&mut rng, &[5, 5, 4, 2]);

    let r1 = conv_reference(&x, &k1, 2, Padding::Same);
    let r3 = conv_reference(&x, &k3, 2, Padding::Same);
    let r5 = conv_reference(&x, &k5, 2, Padding::Same);
    // interleave branch outputs along the channel axis
    let (oh, ow, bc) = (4usize, 4usize, 2usize);
    let mut reference = vec![0.0; oh * ow * bc * 3];
    for p in 0..oh * ow {
        for (bi, r) in [&r1, &r3, &r5].iter().enumerate() {
            for c in 0..bc {
                reference[p * bc * 3 + bi * bc + c] = r[p * bc + c];
            }
        }
    }

    let mut g = Graph::new();
    let xid = g.leaf(x);
    let ids = [k1, k3, k5].map(|k| g.leaf(k));
    let outs: Vec<_> = ids.iter().map(|&k| g.conv2d(xid, k, 2, Padding::Same)).collect();
    let y = g.concat_channels(&outs);
    assert_eq!(g.value(y).shape(), &[1, 4, 4, 6]);
    assert_close(g.value(y).data(), &reference, "inception");
}

#[test]
pub fn residual_matches_sum_of_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[1, 8, 8, 3]);
    let km = random_tensor(&mut rng, &[3, 3, 3, 4]);
    let kp = random_tensor(&mut rng, &[1, 1, 3, 4]);

    let main = conv_reference(&x, &km, 2, Padding::Same);
    let proj = conv_reference(&x, &kp, 2, Padding::Same);
    let reference: Vec<f64> = main.iter().zip(&proj).map(|(a, b)| a + b).collect();

    let mut g = Graph::new();
    let xid = g.leaf(x);
    let kmid = g.leaf(km);
    let kpid = g.leaf(kp);
    let m = g.conv2d(xid, kmid, 2, Padding::Same);
    let p = g.conv2d(xid, kpid, 2, Padding::Same);
    let y = g.add(m, p);
    assert_close(g.value(y).data(), &reference, "residual");
}

/// Independent scalar interpolator evaluated one output pixel at a time,
/// following the documented half-pixel-center formula.
fn bilinear_reference_pixel(image: &ImageTensor, out: usize, oy: usize, ox: usize, c: usize) -> f64 {
    let inp = 16usize;
    let scale = inp as f64 / out as f64;
    let sy = ((oy as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
    let sx = ((ox as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(inp - 1), (x0 + 1).min(inp - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let p00 = image.get(y0, x0, c) as f64;
    let p01 = image.get(y0, x1, c) as f64;
    let p10 = image.get(y1, x0, c) as f64;
    let p11 = image.get(y1, x1, c) as f64;
    let v = (p00 * (1.0 - fx) + p01 * fx) * (1.0 - fy) + (p10 * (1.0 - fx) + p11 * fx) * fy;
    v / 255.0
}

#[test]
pub fn bilinear_resize_matches_reference_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let bytes: Vec<u8> = (0..16 * 16 * 3).map(|_| rng.gen()).collect();
        let image = ImageTensor::from_bytes(bytes, ClassLabel::DDoS, 0);
        for target in [Resolution::R32, Resolution::R71, Resolution::R75] {
            let resized = bilinear_resize(&image, target);
            let out = target.side();
            for oy in 0..out {
                for ox in 0..out {
                    for c in 0..3 {
                        let want = bilinear_reference_pixel(&image, out, oy, ox, c);
                        let got = resized.pixels[(oy * out + ox) * 3 + c];
                        // bit-for-bit: identical f64 arithmetic must agree exactly
                        assert_eq!(
                            got.to_bits(),
                            want.to_bits(),
                            "target {out} pixel ({oy},{ox},{c})"
                        );
                    }
                }
            }
        }
    }
}
