//! Spiral convolution, sparse pooling and their adjoints on row-major
//! `vertices × channels` feature buffers.

use crate::error::{Error, Result};
use crate::multires::{Hierarchy, SpiralTable, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu if x <= 0.0 => x.exp_m1(),
            _ => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu if x <= 0.0 => x.exp(),
            _ => 1.0,
        }
    }
}

/// Concatenates spiral neighbours' features: `V × (S·C)`, zeros for padding.
pub fn gather(features: &[f64], channels: usize, spirals: &SpiralTable) -> Result<Vec<f64>> {
    let v = spirals.vertex_count();
    if features.len() != v * channels {
        return Err(Error::Shape(format!(
            "features hold {} values, spiral table expects {v}x{channels}",
            features.len()
        )));
    }
    let s = spirals.length();
    let mut out = vec![0.0; v * s * channels];
    for (dst, &src) in out.chunks_exact_mut(channels).zip(spirals.indices()) {
        if src != PAD {
            dst.copy_from_slice(&features[src * channels..(src + 1) * channels]);
        }
    }
    Ok(out)
}

/// Adjoint of [`gather`]: accumulates gathered gradients onto vertices.
pub fn scatter(grad_gathered: &[f64], channels: usize, spirals: &SpiralTable) -> Vec<f64> {
    let v = spirals.vertex_count();
    let mut out = vec![0.0; v * channels];
    for (g, &dst) in grad_gathered.chunks_exact(channels).zip(spirals.indices()) {
        if dst != PAD {
            for (o, x) in out[dst * channels..(dst + 1) * channels].iter_mut().zip(g) {
                *o += x;
            }
        }
    }
    out
}

/// `C = A · Bᵀ` for row-major `A: m×k`, `B: n×k`, accumulated into `C: m×n`
/// when `accumulate` is set.
pub(crate) fn gemm_abt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C = A · B` for row-major `A: m×k`, `B: k×n`.
pub(crate) fn gemm_ab(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C += Aᵀ · B` for row-major `A: k×m`, `B: k×n`.
pub(crate) fn gemm_atb_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Saved activations of one convolution.
#[derive(Debug, Clone)]
pub struct ConvTrace {
    pub gathered: Vec<f64>,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

/// Weights are `c_out × (S·c_in)` row-major.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub activation: Activation,
}

pub fn spiral_conv_traced(
    features: &[f64],
    spirals: &SpiralTable,
    shape: ConvShape,
    weights: &[f64],
    bias: &[f64],
) -> Result<ConvTrace> {
    let k = spirals.length() * shape.c_in;
    if weights.len() != shape.c_out * k || bias.len() != shape.c_out {
        return Err(Error::Shape(format!(
            "weights {} / bias {} for {}x{k}",
            weights.len(),
            bias.len(),
            shape.c_out
        )));
    }
    let gathered = gather(features, shape.c_in, spirals)?;
    let v = spirals.vertex_count();
    let mut pre = vec![0.0; v * shape.c_out];
    for row in pre.chunks_exact_mut(shape.c_out) {
        row.copy_from_slice(bias);
    }
    gemm_abt(v, k, shape.c_out, &gathered, weights, &mut pre, true);
    let out = pre.iter().map(|&x| shape.activation.apply(x)).collect();
    Ok(ConvTrace { gathered, pre, out })
}

/// Gathers each spiral, applies the shared affine map, then the activation.
pub fn spiral_conv(
    features: &[f64],
    spirals: &SpiralTable,
    shape: ConvShape,
    weights: &[f64],
    bias: &[f64],
) -> Result<Vec<f64>> {
    Ok(spiral_conv_traced(features, spirals, shape, weights, bias)?.out)
}

/// Backprop through one convolution. Accumulates weight and bias gradients
/// and returns the gradient with respect to the input features.
#[allow(clippy::too_many_arguments)]
pub fn spiral_conv_backward(
    trace: &ConvTrace,
    grad_out: &[f64],
    spirals: &SpiralTable,
    shape: ConvShape,
    weights: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let v = spirals.vertex_count();
    let k = spirals.length() * shape.c_in;
    let grad_pre: Vec<f64> = grad_out
        .iter()
        .zip(&trace.pre)
        .map(|(g, &z)| g * shape.activation.derivative(z))
        .collect();
    for row in grad_pre.chunks_exact(shape.c_out) {
        for (b, g) in grad_bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    gemm_atb_acc(shape.c_out, v, k, &grad_pre, &trace.gathered, grad_weights);
    need_input_grad.then(|| {
        let mut grad_gathered = vec![0.0; v * k];
        gemm_ab(v, shape.c_out, k, &grad_pre, weights, &mut grad_gathered, false);
        scatter(&grad_gathered, shape.c_in, spirals)
    })
}

/// Level `level` → `level + 1`.
pub fn pool(features: &[f64], channels: usize, hierarchy: &Hierarchy, level: usize) -> Result<Vec<f64>> {
    hierarchy.down_matrix(level)?.mul_dense(features, channels)
}

/// Level `level + 1` → `level`.
pub fn unpool(features: &[f64], channels: usize, hierarchy: &Hierarchy, level: usize) -> Result<Vec<f64>> {
    hierarchy.up_matrix(level)?.mul_dense(features, channels)
}

pub(crate) fn pool_backward(grad: &[f64], channels: usize, hierarchy: &Hierarchy, level: usize) -> Result<Vec<f64>> {
    hierarchy.down_matrix(level)?.mul_dense_transpose(grad, channels)
}

pub(crate) fn unpool_backward(grad: &[f64], channels: usize, hierarchy: &Hierarchy, level: usize) -> Result<Vec<f64>> {
    hierarchy.up_matrix(level)?.mul_dense_transpose(grad, channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Topology;
    use crate::multires::build_spirals;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn five_vertex_topology() -> Topology {
        Topology::new(5, vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]).unwrap()
    }

    #[test]
    fn self_selecting_identity_weights_reproduce_input() {
        let topo = five_vertex_topology();
        let spirals = build_spirals(&topo, 3);
        let c = 2;
        let shape = ConvShape {
            c_in: c,
            c_out: c,
            activation: Activation::Linear,
        };
        let mut w = vec![0.0; c * 3 * c];
        for i in 0..c {
            w[i * 3 * c + i] = 1.0; // slot 0 is the vertex itself
        }
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let y = spiral_conv(&x, &spirals, shape, &w, &[0.0; 2]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn constant_field_gives_constant_output_on_uniform_spirals() {
        let m = crate::shapes::icosphere(1);
        let spirals = build_spirals(m.topology(), 7);
        let shape = ConvShape {
            c_in: 2,
            c_out: 3,
            activation: Activation::Elu,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..3 * 14).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..m.vertex_count()).flat_map(|_| [0.4, -0.7]).collect();
        let y = spiral_conv(&x, &spirals, shape, &w, &[0.1, 0.2, 0.3]).unwrap();
        for row in y.chunks_exact(3) {
            for (a, b) in row.iter().zip(&y[..3]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_gather_concat_matmul() {
        let topo = five_vertex_topology();
        let spirals = build_spirals(&topo, 4);
        let (c_in, c_out) = (3, 2);
        let shape = ConvShape {
            c_in,
            c_out,
            activation: Activation::Elu,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..5 * c_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..c_out * 4 * c_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = spiral_conv(&x, &spirals, shape, &w, &b).unwrap();
        for v in 0..5 {
            let mut concat = Vec::new();
            for &u in spirals.spiral(v) {
                for c in 0..c_in {
                    concat.push(if u == PAD { 0.0 } else { x[u * c_in + c] });
                }
            }
            for o in 0..c_out {
                let z: f64 = b[o]
                    + (0..concat.len())
                        .map(|j| w[o * concat.len() + j] * concat[j])
                        .sum::<f64>();
                let expect = if z > 0.0 { z } else { z.exp() - 1.0 };
                assert!((y[v * c_out + o] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let topo = five_vertex_topology();
        let spirals = build_spirals(&topo, 2);
        let shape = ConvShape {
            c_in: 1,
            c_out: 1,
            activation: Activation::Linear,
        };
        assert!(spiral_conv(&[0.0; 4], &spirals, shape, &[0.0; 2], &[0.0]).is_err());
    }

    #[test]
    fn pooling_matches_dense_product() {
        let s = crate::shapes::icosphere(2);
        let h = crate::multires::build_hierarchy(&s, &[60]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..162 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pooled = pool(&x, 2, &h, 0).unwrap();
        let dense = h.down_matrix(0).unwrap().to_dense();
        for r in 0..60 {
            for c in 0..2 {
                let expect: f64 = (0..162).map(|j| dense[r * 162 + j] * x[j * 2 + c]).sum();
                assert!((pooled[r * 2 + c] - expect).abs() < 1e-9);
            }
        }
        let back = unpool(&pooled, 2, &h, 0).unwrap();
        for (r, &f) in h.retained_indices(0).unwrap().iter().enumerate() {
            assert_eq!(&back[f * 2..f * 2 + 2], &pooled[r * 2..r * 2 + 2]);
            assert_eq!(&back[f * 2..f * 2 + 2], &x[f * 2..f * 2 + 2]);
        }
        let constant = vec![1.5; 162];
        assert!(pool(&constant, 1, &h, 0).unwrap().iter().all(|&v| v == 1.5));
        assert!(unpool(&vec![1.5; 60], 1, &h, 0)
            .unwrap()
            .iter()
            .all(|&v| (v - 1.5).abs() < 1e-12));
        assert!(matches!(pool(&x, 2, &h, 1), Err(Error::LevelOutOfRange { .. })));
    }
}
