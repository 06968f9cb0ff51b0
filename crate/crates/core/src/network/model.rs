use super::layers::{
    pool, pool_backward, spiral_conv_backward, spiral_conv_traced, unpool, unpool_backward, Activation, ConvShape,
    ConvTrace,
};
use super::{LatentCode, ModelParams, ParamLayout};
use crate::error::{Error, Result};
use crate::mesh::Vec3;
use crate::multires::Hierarchy;

/// Saved activations of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    convs: Vec<ConvTrace>,
    /// Vertex-mean of the last convolution output.
    pooled_mean: Vec<f64>,
}

/// Saved activations of one decoder pass.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    code: Vec<f64>,
    convs: Vec<ConvTrace>,
}

impl DecoderTrace {
    /// Offsets added to the source, flattened `xyz` per vertex.
    pub fn offsets(&self) -> &[f64] {
        &self.convs.last().expect("decoder has layers").out
    }
}

fn flatten_centered(points: &[Vec3]) -> Vec<f64> {
    let n = points.len().max(1) as f64;
    let c = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    points
        .iter()
        .flat_map(|p| {
            let q = p - c;
            [q.x, q.y, q.z]
        })
        .collect()
}

fn check_input(params: &ModelParams, hierarchy: &Hierarchy, points: &[Vec3], what: &str) -> Result<()> {
    if hierarchy.spiral_length() != params.spiral_length {
        return Err(Error::Shape(format!(
            "parameters expect spiral length {}, hierarchy has {}",
            params.spiral_length,
            hierarchy.spiral_length()
        )));
    }
    params.arch.validate(hierarchy)?;
    let expected = hierarchy.level(params.arch.input_level)?.vertex_count();
    if points.len() != expected {
        return Err(Error::CountMismatch {
            expected,
            found: points.len(),
        });
    }
    if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite(format!("{what} positions")));
    }
    Ok(())
}

fn weight_bias<'a>(layout: &ParamLayout, values: &'a [f64], prefix: &str) -> (&'a [f64], &'a [f64]) {
    let w = layout.get(&format!("{prefix}.weight")).expect("weight tensor");
    let b = layout.get(&format!("{prefix}.bias")).expect("bias tensor");
    (&values[w.range()], &values[b.range()])
}

fn weight_bias_mut<'a>(layout: &ParamLayout, grad: &'a mut [f64], prefix: &str) -> (&'a mut [f64], &'a mut [f64]) {
    let w = layout.get(&format!("{prefix}.weight")).expect("weight tensor");
    let b = layout.get(&format!("{prefix}.bias")).expect("bias tensor");
    debug_assert_eq!(w.offset + w.len(), b.offset);
    let (head, tail) = grad[w.offset..].split_at_mut(w.len());
    (head, &mut tail[..b.len()])
}

fn check_grad_len(params: &ModelParams, grad: &[f64]) -> Result<()> {
    if grad.len() != params.param_count() {
        return Err(Error::Shape(format!(
            "gradient buffer has {} entries, model has {}",
            grad.len(),
            params.param_count()
        )));
    }
    Ok(())
}

pub fn encode_traced(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    target: &[Vec3],
) -> Result<(LatentCode, EncoderTrace)> {
    check_input(params, hierarchy, target, "target")?;
    let arch = &params.arch;
    let mut x = flatten_centered(target);
    let mut c_in = 3;
    let mut convs = Vec::with_capacity(arch.depth());
    for (i, &c_out) in arch.encoder_channels.iter().enumerate() {
        let level = arch.level_of_conv(i);
        let (w, b) = weight_bias(&params.layout, &params.values, &format!("enc.conv{i}"));
        let shape = ConvShape {
            c_in,
            c_out,
            activation: Activation::Elu,
        };
        let trace = spiral_conv_traced(&x, hierarchy.spirals(level)?, shape, w, b)?;
        x = if i + 1 < arch.depth() {
            pool(&trace.out, c_out, hierarchy, level)?
        } else {
            trace.out.clone()
        };
        convs.push(trace);
        c_in = c_out;
    }
    let v = (x.len() / c_in) as f64;
    let mut mean = vec![0.0; c_in];
    for row in x.chunks_exact(c_in) {
        for (m, r) in mean.iter_mut().zip(row) {
            *m += r / v;
        }
    }
    let (w, b) = weight_bias(&params.layout, &params.values, "enc.fc");
    let code = dense(w, b, &mean);
    Ok((
        LatentCode(code),
        EncoderTrace {
            convs,
            pooled_mean: mean,
        },
    ))
}

pub fn encode(params: &ModelParams, hierarchy: &Hierarchy, target: &[Vec3]) -> Result<LatentCode> {
    Ok(encode_traced(params, hierarchy, target)?.0)
}

/// Accumulates parameter gradients for `d loss / d code`.
pub fn encode_backward(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    trace: &EncoderTrace,
    grad_code: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    check_grad_len(params, grad)?;
    let arch = &params.arch;
    if grad_code.len() != arch.latent_dim {
        return Err(Error::Shape(format!("code gradient has {} entries", grad_code.len())));
    }
    let c_last = *arch.encoder_channels.last().expect("non-empty");
    let (w, _) = weight_bias(&params.layout, &params.values, "enc.fc");
    let grad_mean = {
        let (gw, gb) = weight_bias_mut(&params.layout, grad, "enc.fc");
        dense_backward(w, &trace.pooled_mean, grad_code, gw, gb)
    };
    let last_level = arch.level_of_conv(arch.depth() - 1);
    let v = hierarchy.level(last_level)?.vertex_count();
    let mut g: Vec<f64> = (0..v).flat_map(|_| grad_mean.iter().map(|x| x / v as f64)).collect();
    for i in (0..arch.depth()).rev() {
        let level = arch.level_of_conv(i);
        let c_out = arch.encoder_channels[i];
        let c_in = if i == 0 { 3 } else { arch.encoder_channels[i - 1] };
        if i + 1 < arch.depth() {
            g = pool_backward(&g, c_out, hierarchy, level)?;
        }
        let shape = ConvShape {
            c_in,
            c_out,
            activation: Activation::Elu,
        };
        let prefix = format!("enc.conv{i}");
        let (w, _) = weight_bias(&params.layout, &params.values, &prefix);
        let (gw, gb) = weight_bias_mut(&params.layout, grad, &prefix);
        match spiral_conv_backward(&trace.convs[i], &g, hierarchy.spirals(level)?, shape, w, gw, gb, i > 0) {
            Some(next) => g = next,
            None => break,
        }
    }
    debug_assert_eq!(c_last, arch.encoder_channels[arch.depth() - 1]);
    Ok(())
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Returns the input gradient.
fn dense_backward(w: &[f64], x: &[f64], grad_out: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
    let mut gx = vec![0.0; x.len()];
    for (r, &go) in grad_out.iter().enumerate() {
        gb[r] += go;
        let row = &w[r * x.len()..(r + 1) * x.len()];
        let grow = &mut gw[r * x.len()..(r + 1) * x.len()];
        for k in 0..x.len() {
            grow[k] += go * x[k];
            gx[k] += go * row[k];
        }
    }
    gx
}

/// Source coordinates restricted to every level the network touches,
/// centred on the source centroid.
fn source_pyramid(params: &ModelParams, hierarchy: &Hierarchy, source: &[Vec3]) -> Result<Vec<Vec<f64>>> {
    let arch = &params.arch;
    let mut levels = vec![flatten_centered(source)];
    for i in 0..arch.depth() - 1 {
        let next = pool(&levels[i], 3, hierarchy, arch.level_of_conv(i))?;
        levels.push(next);
    }
    Ok(levels)
}

fn concat_rows(a: &[f64], ca: usize, b: &[f64], cb: usize) -> Vec<f64> {
    a.chunks_exact(ca)
        .zip(b.chunks_exact(cb))
        .flat_map(|(x, y)| x.iter().chain(y).copied())
        .collect()
}

/// Returns `source + offsets` and the saved activations.
pub fn decode_traced(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    code: &LatentCode,
    source: &[Vec3],
) -> Result<(Vec<Vec3>, DecoderTrace)> {
    check_input(params, hierarchy, source, "source")?;
    let arch = &params.arch;
    if code.dim() != arch.latent_dim {
        return Err(Error::Shape(format!(
            "code has {} entries, model expects {}",
            code.dim(),
            arch.latent_dim
        )));
    }
    if !code.0.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("latent code".into()));
    }
    let pyramid = source_pyramid(params, hierarchy, source)?;
    let depth = arch.depth();
    let mut c_h = *arch.encoder_channels.last().expect("non-empty");
    let (w, b) = weight_bias(&params.layout, &params.values, "dec.fc");
    let seed = dense(w, b, &code.0);
    let coarse_level = arch.level_of_conv(depth - 1);
    let v_coarse = hierarchy.level(coarse_level)?.vertex_count();
    let mut h: Vec<f64> = (0..v_coarse).flat_map(|_| seed.iter().copied()).collect();
    let mut convs = Vec::with_capacity(depth);
    for (j, c_out) in arch.decoder_channels().into_iter().enumerate() {
        let idx = depth - 1 - j;
        let level = arch.level_of_conv(idx);
        let input = concat_rows(&h, c_h, &pyramid[idx], 3);
        let shape = ConvShape {
            c_in: c_h + 3,
            c_out,
            activation: if j + 1 == depth {
                Activation::Linear
            } else {
                Activation::Elu
            },
        };
        let (w, b) = weight_bias(&params.layout, &params.values, &format!("dec.conv{j}"));
        let trace = spiral_conv_traced(&input, hierarchy.spirals(level)?, shape, w, b)?;
        h = if j + 1 < depth {
            unpool(&trace.out, c_out, hierarchy, level - 1)?
        } else {
            trace.out.clone()
        };
        convs.push(trace);
        c_h = c_out;
    }
    let pred = source
        .iter()
        .zip(h.chunks_exact(3))
        .map(|(p, d)| p + Vec3::new(d[0], d[1], d[2]))
        .collect();
    Ok((
        pred,
        DecoderTrace {
            code: code.0.clone(),
            convs,
        },
    ))
}

pub fn decode(params: &ModelParams, hierarchy: &Hierarchy, code: &LatentCode, source: &[Vec3]) -> Result<Vec<Vec3>> {
    Ok(decode_traced(params, hierarchy, code, source)?.0)
}

/// Accumulates parameter gradients for `d loss / d pred` and returns
/// `d loss / d code`. The source is treated as a constant.
pub fn decode_backward(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    trace: &DecoderTrace,
    grad_pred: &[Vec3],
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    check_grad_len(params, grad)?;
    let arch = &params.arch;
    let depth = arch.depth();
    let dec_ch = arch.decoder_channels();
    let mut g: Vec<f64> = grad_pred.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let expected = hierarchy.level(arch.input_level)?.vertex_count() * 3;
    if g.len() != expected {
        return Err(Error::Shape(format!(
            "prediction gradient has {} entries, expected {expected}",
            g.len()
        )));
    }
    for j in (0..depth).rev() {
        let idx = depth - 1 - j;
        let level = arch.level_of_conv(idx);
        let c_out = dec_ch[j];
        let c_h = if j == 0 {
            *arch.encoder_channels.last().expect("non-empty")
        } else {
            dec_ch[j - 1]
        };
        if j + 1 < depth {
            g = unpool_backward(&g, c_out, hierarchy, level - 1)?;
        }
        let shape = ConvShape {
            c_in: c_h + 3,
            c_out,
            activation: if j + 1 == depth {
                Activation::Linear
            } else {
                Activation::Elu
            },
        };
        let prefix = format!("dec.conv{j}");
        let (w, _) = weight_bias(&params.layout, &params.values, &prefix);
        let (gw, gb) = weight_bias_mut(&params.layout, grad, &prefix);
        let g_in = spiral_conv_backward(&trace.convs[j], &g, hierarchy.spirals(level)?, shape, w, gw, gb, true)
            .expect("input gradient requested");
        g = g_in
            .chunks_exact(c_h + 3)
            .flat_map(|row| row[..c_h].iter().copied())
            .collect();
    }
    let c_last = *arch.encoder_channels.last().expect("non-empty");
    let mut g_seed = vec![0.0; c_last];
    for row in g.chunks_exact(c_last) {
        for (s, r) in g_seed.iter_mut().zip(row) {
            *s += r;
        }
    }
    let (w, _) = weight_bias(&params.layout, &params.values, "dec.fc");
    let (gw, gb) = weight_bias_mut(&params.layout, grad, "dec.fc");
    Ok(dense_backward(w, &trace.code, &g_seed, gw, gb))
}

/// Poses `target`'s identity like `source`.
pub fn forward_transfer(
    params: &ModelParams,
    hierarchy: &Hierarchy,
    source: &[Vec3],
    target: &[Vec3],
) -> Result<Vec<Vec3>> {
    let code = encode(params, hierarchy, target)?;
    decode(params, hierarchy, &code, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::multires::build_hierarchy;
    use crate::network::ArchConfig;
    use crate::shapes::icosphere;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Hierarchy, ModelParams, Mesh) {
        let sphere = icosphere(1);
        let h = build_hierarchy(&sphere, &[20, 10]).unwrap();
        let arch = ArchConfig {
            encoder_channels: vec![4, 5, 6],
            latent_dim: 3,
            output_init_scale: 1.0,
            ..ArchConfig::default()
        };
        let params = ModelParams::init(arch, &h, 7).unwrap();
        (h, params, sphere)
    }

    fn jitter(points: &[Vec3], seed: u64, amp: f64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        points
            .iter()
            .map(|p| {
                p + Vec3::new(
                    rng.gen_range(-amp..amp),
                    rng.gen_range(-amp..amp),
                    rng.gen_range(-amp..amp),
                )
            })
            .collect()
    }

    /// Scalar test loss: a fixed random projection of the prediction.
    fn probe(pred: &[Vec3], weights: &[Vec3]) -> f64 {
        pred.iter().zip(weights).map(|(p, w)| p.dot(w)).sum()
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let (h, params, sphere) = toy();
        let source = jitter(&sphere.vertices, 1, 0.1);
        let target = jitter(&sphere.vertices, 2, 0.1);
        let probe_w = jitter(&vec![Vec3::zeros(); source.len()], 3, 1.0);
        let loss = |p: &ModelParams| {
            let pred = forward_transfer(p, &h, &source, &target).unwrap();
            probe(&pred, &probe_w)
        };
        let (code, enc) = encode_traced(&params, &h, &target).unwrap();
        let (_, dec) = decode_traced(&params, &h, &code, &source).unwrap();
        let mut grad = params.zeros_like();
        let g_code = decode_backward(&params, &h, &dec, &probe_w, &mut grad).unwrap();
        encode_backward(&params, &h, &enc, &g_code, &mut grad).unwrap();

        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for t in &params.layout.tensors {
            for i in t.range().step_by((t.len() / 4).max(1)) {
                let mut p = params.clone();
                p.values[i] += eps;
                let up = loss(&p);
                p.values[i] -= 2.0 * eps;
                let down = loss(&p);
                let fd = (up - down) / (2.0 * eps);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
                worst = worst.max(rel);
                assert!(
                    rel < 1e-4,
                    "{} [{}]: fd {fd} vs analytic {}",
                    t.name,
                    i - t.offset,
                    grad[i]
                );
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn translation_of_target_does_not_change_code() {
        let (h, params, sphere) = toy();
        let target = jitter(&sphere.vertices, 4, 0.1);
        let moved: Vec<Vec3> = target.iter().map(|p| p + Vec3::new(3.0, -1.0, 2.0)).collect();
        let a = encode(&params, &h, &target).unwrap();
        let b = encode(&params, &h, &moved).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_layer_returns_source() {
        let (h, mut params, sphere) = toy();
        let name = format!("dec.conv{}", params.arch.depth() - 1);
        params.tensor_mut(&format!("{name}.weight")).fill(0.0);
        let source = jitter(&sphere.vertices, 5, 0.1);
        let target = jitter(&sphere.vertices, 6, 0.1);
        let pred = forward_transfer(&params, &h, &source, &target).unwrap();
        assert_eq!(pred, source);
    }

    #[test]
    fn rejects_wrong_vertex_count() {
        let (h, params, sphere) = toy();
        let short = &sphere.vertices[..10];
        assert!(matches!(encode(&params, &h, short), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn too_deep_architecture_is_rejected() {
        let sphere = icosphere(1);
        let h = build_hierarchy(&sphere, &[20]).unwrap();
        assert!(ModelParams::init(ArchConfig::default(), &h, 0).is_err());
    }
}
