use rand::{Rng, RngCore};

use super::{fingerprint, ContextVector, EvaluatorParams, LayerLayout, SD_DIM};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Inverted dropout with the given drop probability after each hidden layer.
    Train { dropout: f64 },
    Eval,
}

#[derive(Debug, Clone)]
struct SampleTrace {
    sd: [f64; SD_DIM],
    /// Pre-activations of every layer (hidden layers then the output logit).
    pre: Vec<Vec<f64>>,
    /// Hidden activations after ReLU and mask.
    post: Vec<Vec<f64>>,
    /// Per hidden layer multiplier (`0` or `1/keep`), absent in eval mode.
    masks: Option<Vec<Vec<f64>>>,
    output: f64,
}

/// Everything backward needs to replay a batch that shares one context.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    params_fingerprint: u64,
    ctx: Vec<f64>,
    samples: Vec<SampleTrace>,
    mode: Mode,
}

impl ForwardCache {
    pub fn predictions(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.output).collect()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Dropout multipliers per sample, for replay via [`forward_with_masks`].
    pub fn masks(&self) -> Vec<Option<Vec<Vec<f64>>>> {
        self.samples.iter().map(|s| s.masks.clone()).collect()
    }
}

enum Masking<'a> {
    Off,
    Draw { keep: f64, rng: &'a mut dyn RngCore },
    Replay(&'a [Vec<Vec<f64>>]),
}

/// Kept strictly inside (0, 1); the clamp moves the value by at most one ulp.
fn logistic(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn check_inputs(params: &EvaluatorParams, sds: &[[f64; SD_DIM]], ctx: &[f64]) -> Result<()> {
    if ctx.len() != params.dims.ctx_dim {
        return Err(Error::DimensionMismatch {
            what: "context vector",
            expected: params.dims.ctx_dim,
            got: ctx.len(),
        });
    }
    if ctx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("context vector"));
    }
    if sds.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("descriptor features"));
    }
    Ok(())
}

/// First-layer contribution of the shared context plus bias.
fn context_preactivation(params: &EvaluatorParams, first: &LayerLayout, ctx: &[f64]) -> Vec<f64> {
    let w = params.weights(first);
    let b = params.bias(first);
    (0..first.fan_out)
        .map(|j| {
            let row = &w[j * first.fan_in..(j + 1) * first.fan_in];
            b[j] + dot(&row[SD_DIM..], ctx)
        })
        .collect()
}

fn run(
    params: &EvaluatorParams,
    sds: &[[f64; SD_DIM]],
    ctx: &[f64],
    mut masking: Masking<'_>,
    mode: Mode,
) -> Result<ForwardCache> {
    check_inputs(params, sds, ctx)?;
    let layout = params.dims.layout();
    let n_hidden = layout.len() - 1;
    let ctx_pre = context_preactivation(params, &layout[0], ctx);

    let mut samples = Vec::with_capacity(sds.len());
    for (i, sd) in sds.iter().enumerate() {
        let replay = match &masking {
            Masking::Replay(all) => {
                let m = all
                    .get(i)
                    .ok_or(Error::StaleCache("fewer replay masks than samples"))?;
                if m.len() != n_hidden {
                    return Err(Error::StaleCache("replay mask depth"));
                }
                Some(m)
            }
            _ => None,
        };

        let mut pre = Vec::with_capacity(layout.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        let mut masks = match masking {
            Masking::Off => None,
            _ => Some(Vec::with_capacity(n_hidden)),
        };

        for (l, lay) in layout.iter().enumerate() {
            let w = params.weights(lay);
            let z: Vec<f64> = if l == 0 {
                (0..lay.fan_out)
                    .map(|j| {
                        let row = &w[j * lay.fan_in..j * lay.fan_in + SD_DIM];
                        ctx_pre[j] + dot(row, sd)
                    })
                    .collect()
            } else {
                let input = &post[l - 1];
                let b = params.bias(lay);
                (0..lay.fan_out)
                    .map(|j| b[j] + dot(&w[j * lay.fan_in..(j + 1) * lay.fan_in], input))
                    .collect()
            };

            if l < n_hidden {
                let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
                let mask = match &mut masking {
                    Masking::Off => None,
                    Masking::Draw { keep, rng } => {
                        let keep = *keep;
                        Some(
                            (0..a.len())
                                .map(|_| {
                                    if rng.random::<f64>() < keep {
                                        1.0 / keep
                                    } else {
                                        0.0
                                    }
                                })
                                .collect::<Vec<f64>>(),
                        )
                    }
                    Masking::Replay(_) => {
                        let m = &replay.expect("replay mask")[l];
                        if m.len() != a.len() {
                            return Err(Error::StaleCache("replay mask width"));
                        }
                        Some(m.clone())
                    }
                };
                if let Some(mask) = mask {
                    a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    masks.as_mut().expect("mask storage").push(mask);
                }
                post.push(a);
            }
            pre.push(z);
        }

        let output = logistic(pre[n_hidden][0]);
        samples.push(SampleTrace {
            sd: *sd,
            pre,
            post,
            masks,
            output,
        });
    }

    Ok(ForwardCache {
        params_fingerprint: params.fingerprint(),
        ctx: ctx.to_vec(),
        samples,
        mode,
    })
}

/// Forward pass over a batch of descriptors sharing one context.
pub fn forward_batch(
    params: &EvaluatorParams,
    sds: &[[f64; SD_DIM]],
    ctx: &ContextVector,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<ForwardCache> {
    let masking = match mode {
        Mode::Eval => Masking::Off,
        Mode::Train { dropout } => {
            if !(0.0..1.0).contains(&dropout) {
                return Err(Error::invalid(format!("dropout {dropout} outside [0,1)")));
            }
            Masking::Draw {
                keep: 1.0 - dropout,
                rng,
            }
        }
    };
    run(params, sds, &ctx.values, masking, mode)
}

/// Single-sample forward. Returns the prediction in `(0, 1)` and its cache.
pub fn forward(
    params: &EvaluatorParams,
    sd_norm: &[f64],
    ctx: &ContextVector,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(f64, ForwardCache)> {
    let sd: [f64; SD_DIM] = sd_norm.try_into().map_err(|_| Error::DimensionMismatch {
        what: "descriptor features",
        expected: SD_DIM,
        got: sd_norm.len(),
    })?;
    let cache = forward_batch(params, &[sd], ctx, mode, rng)?;
    Ok((cache.samples[0].output, cache))
}

/// Forward with explicit dropout multipliers per sample and hidden layer.
pub fn forward_with_masks(
    params: &EvaluatorParams,
    sds: &[[f64; SD_DIM]],
    ctx: &ContextVector,
    masks: &[Vec<Vec<f64>>],
) -> Result<ForwardCache> {
    run(
        params,
        sds,
        &ctx.values,
        Masking::Replay(masks),
        Mode::Train { dropout: f64::NAN },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Want {
    pub params: bool,
    pub ctx: bool,
}

impl Want {
    pub const BOTH: Want = Want {
        params: true,
        ctx: true,
    };
    pub const PARAMS: Want = Want {
        params: true,
        ctx: false,
    };
    pub const CTX: Want = Want {
        params: false,
        ctx: true,
    };
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same flat layout as [`EvaluatorParams::data`].
    pub params: Option<Vec<f64>>,
    pub ctx: Option<Vec<f64>>,
}

/// Exact gradients of `Σᵢ upstreamᵢ · predᵢ` with respect to the parameters
/// and the shared context.
pub fn backward(
    params: &EvaluatorParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<Gradients> {
    backward_selective(params, cache, upstream, Want::BOTH)
}

pub(crate) fn backward_selective(
    params: &EvaluatorParams,
    cache: &ForwardCache,
    upstream: &[f64],
    want: Want,
) -> Result<Gradients> {
    if upstream.len() != cache.samples.len() {
        return Err(Error::StaleCache("upstream length differs from batch"));
    }
    if cache.ctx.len() != params.dims.ctx_dim {
        return Err(Error::StaleCache("context width differs from parameters"));
    }
    if fingerprint(&params.data) != cache.params_fingerprint {
        return Err(Error::StaleCache("parameters changed since forward"));
    }

    let layout = params.dims.layout();
    let n_hidden = layout.len() - 1;
    let first = layout[0];
    let mut grad = want.params.then(|| vec![0.0; params.len()]);
    let mut first_delta_sum = vec![0.0; first.fan_out];

    for (s, &up) in cache.samples.iter().zip(upstream) {
        if up == 0.0 {
            continue;
        }
        let p = s.output;
        let mut delta = vec![up * p * (1.0 - p)];

        for l in (0..layout.len()).rev() {
            let lay = layout[l];
            let w = params.weights(&lay);
            if let Some(g) = grad.as_mut() {
                if l == 0 {
                    for (j, &dj) in delta.iter().enumerate() {
                        let row = &mut g[lay.weights + j * lay.fan_in..][..SD_DIM];
                        axpy(dj, &s.sd, row);
                    }
                } else {
                    let input = &s.post[l - 1];
                    for (j, &dj) in delta.iter().enumerate() {
                        if dj != 0.0 {
                            let row = &mut g[lay.weights + j * lay.fan_in..][..lay.fan_in];
                            axpy(dj, input, row);
                        }
                    }
                }
                axpy(1.0, &delta, &mut g[lay.bias..lay.bias + lay.fan_out]);
            }

            if l == 0 {
                axpy(1.0, &delta, &mut first_delta_sum);
                break;
            }

            // Back through the weights, then the mask and ReLU of layer l-1.
            let mut prev = vec![0.0; lay.fan_in];
            for (j, &dj) in delta.iter().enumerate() {
                if dj != 0.0 {
                    axpy(dj, &w[j * lay.fan_in..(j + 1) * lay.fan_in], &mut prev);
                }
            }
            let z = &s.pre[l - 1];
            for (k, v) in prev.iter_mut().enumerate() {
                if z[k] <= 0.0 {
                    *v = 0.0;
                }
            }
            if let Some(masks) = &s.masks {
                prev.iter_mut().zip(&masks[l - 1]).for_each(|(v, m)| *v *= m);
            }
            debug_assert!(l - 1 < n_hidden);
            delta = prev;
        }
    }

    let w0 = params.weights(&first);
    if let Some(g) = grad.as_mut() {
        for (j, &dj) in first_delta_sum.iter().enumerate() {
            if dj != 0.0 {
                let row = &mut g[first.weights + j * first.fan_in + SD_DIM..][..first.fan_in - SD_DIM];
                axpy(dj, &cache.ctx, row);
            }
        }
    }
    let ctx_grad = want.ctx.then(|| {
        let mut gc = vec![0.0; first.fan_in - SD_DIM];
        for (j, &dj) in first_delta_sum.iter().enumerate() {
            if dj != 0.0 {
                axpy(dj, &w0[j * first.fan_in + SD_DIM..(j + 1) * first.fan_in], &mut gc);
            }
        }
        gc
    });

    Ok(Gradients {
        params: grad,
        ctx: ctx_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, Dims};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (EvaluatorParams, ContextVector) {
        let dims = Dims::new(2, vec![8, 4, 2]).unwrap();
        let p = init_params(1, &dims).unwrap();
        let ctx = ContextVector {
            model_id: "m".into(),
            values: vec![0.3, -0.2],
        };
        (p, ctx)
    }

    #[test]
    fn zero_network_predicts_half() {
        let dims = Dims::new(4, vec![5, 3]).unwrap();
        let p = EvaluatorParams::zeros(dims);
        let ctx = ContextVector::zeros("m", 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, _) = forward(&p, &[1.0, 2.0, 3.0], &ctx, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, 0.5);
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let (p, ctx) = small();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let (a, _) = forward(&p, &[0.1, -1.0, 2.0], &ctx, Mode::Eval, &mut r1).unwrap();
        let (b, _) = forward(&p, &[0.1, -1.0, 2.0], &ctx, Mode::Eval, &mut r2).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn keep_everything_matches_eval() {
        let (p, ctx) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sd = [0.5, 0.25, -0.75];
        let (e, _) = forward(&p, &sd, &ctx, Mode::Eval, &mut rng).unwrap();
        let (t, _) = forward(&p, &sd, &ctx, Mode::Train { dropout: 0.0 }, &mut rng).unwrap();
        assert_eq!(e.to_bits(), t.to_bits());

        let ones = vec![vec![vec![1.0; 8], vec![1.0; 4], vec![1.0; 2]]];
        let r = forward_with_masks(&p, &[sd], &ctx, &ones).unwrap();
        assert_eq!(r.predictions()[0].to_bits(), e.to_bits());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (p, _) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wrong = ContextVector::zeros("m", 3);
        assert!(forward(&p, &[0.0; 3], &wrong, Mode::Eval, &mut rng).is_err());
        let ctx = ContextVector::zeros("m", 2);
        assert!(forward(&p, &[0.0; 2], &ctx, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (p, ctx) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = forward(&p, &[1.0, 0.0, -1.0], &ctx, Mode::Eval, &mut rng).unwrap();
        let g = backward(&p, &cache, &[0.0]).unwrap();
        assert!(g.params.unwrap().iter().all(|&v| v == 0.0));
        assert!(g.ctx.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_detected() {
        let (mut p, ctx) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = forward(&p, &[1.0, 0.0, -1.0], &ctx, Mode::Eval, &mut rng).unwrap();
        assert!(backward(&p, &cache, &[1.0, 1.0]).is_err());
        p.data[0] += 1.0;
        assert!(matches!(
            backward(&p, &cache, &[1.0]),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn dropout_masks_are_inverted_scaled() {
        let (p, ctx) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cache =
            forward_batch(&p, &[[0.0; 3]; 16], &ctx, Mode::Train { dropout: 0.2 }, &mut rng)
                .unwrap();
        for m in cache.masks().into_iter().flatten().flatten().flatten() {
            assert!(m == 0.0 || (m - 1.25).abs() < 1e-15);
        }
    }
}
