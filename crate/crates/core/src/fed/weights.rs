//! Weight snapshots, deltas and federated averaging.
//!
//! Deltas are held in `f64`: the difference of two `f32` values of similar
//! magnitude is exact there, so `apply_delta(g, compute_delta(l, g))` gives
//! back `l` bit for bit and a single-client federation reproduces local
//! training exactly.

use sha2::{Digest, Sha256};

use super::FedError;
use crate::model::AutoencoderModel;
use crate::nn::{ParamSet, Tensor};

/// Ordered named `f32` tensors; the unit of model distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    params: ParamSet<f32>,
}

/// Per-parameter difference against the global model of `base_round`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightDelta {
    pub params: ParamSet<f64>,
    pub base_round: u64,
}

impl ModelWeights {
    pub fn new(params: ParamSet<f32>) -> Result<Self, FedError> {
        let mut seen = std::collections::HashSet::new();
        for name in params.names() {
            if !seen.insert(name) {
                return Err(FedError::Layout(format!("duplicate tensor name {name:?}")));
            }
        }
        Ok(Self { params })
    }

    pub fn from_model(model: &AutoencoderModel<f32>) -> Self {
        Self {
            params: model.param_set(),
        }
    }

    pub fn load_into(&self, model: &mut AutoencoderModel<f32>) -> Result<(), FedError> {
        model
            .load_param_set(&self.params)
            .map_err(|e| FedError::Layout(e.to_string()))
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn numel(&self) -> usize {
        self.params.numel()
    }

    /// SHA-256 over names, shapes and the little-endian value bits.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.params.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Bitwise equality including the sign of zero and NaN payloads.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.fingerprint() == other.fingerprint()
    }
}

fn check_layout<A: crate::nn::Scalar, B: crate::nn::Scalar>(
    a: &ParamSet<A>,
    b: &ParamSet<B>,
) -> Result<(), FedError> {
    if a.len() != b.len() {
        return Err(FedError::Layout(format!("{} tensors vs {}", a.len(), b.len())));
    }
    for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
        if na != nb || ta.shape() != tb.shape() {
            return Err(FedError::Layout(format!(
                "{na}{:?} vs {nb}{:?}",
                ta.shape(),
                tb.shape()
            )));
        }
    }
    Ok(())
}

/// `local − base` elementwise.
pub fn compute_delta(local: &ModelWeights, base: &ModelWeights, base_round: u64) -> Result<WeightDelta, FedError> {
    check_layout(&local.params, &base.params)?;
    let params = local
        .params
        .iter()
        .zip(base.params.iter())
        .map(|((name, l), (_, g))| {
            let data = l
                .data()
                .iter()
                .zip(g.data())
                .map(|(&l, &g)| l as f64 - g as f64)
                .collect();
            (name.to_string(), Tensor::new(l.shape().to_vec(), data).expect("same shape"))
        })
        .collect();
    Ok(WeightDelta { params, base_round })
}

/// `global + delta`, rounded once to `f32`.
pub fn apply_delta(global: &ModelWeights, delta: &WeightDelta) -> Result<ModelWeights, FedError> {
    check_layout(&global.params, &delta.params)?;
    let params = global
        .params
        .iter()
        .zip(delta.params.iter())
        .map(|((name, g), (_, d))| {
            let data = g
                .data()
                .iter()
                .zip(d.data())
                .map(|(&g, &d)| (g as f64 + d) as f32)
                .collect();
            (name.to_string(), Tensor::new(g.shape().to_vec(), data).expect("same shape"))
        })
        .collect();
    Ok(ModelWeights { params })
}

/// Exact sum of `values` rounded once, independent of their order.
fn exact_sum(values: impl Iterator<Item = f64>) -> f64 {
    // Shewchuk's non-overlapping partials
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // round the expansion to the nearest double (half-even handled as in fsum)
    let mut hi = 0.0;
    if let Some(mut n) = partials.len().checked_sub(1) {
        hi = partials[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = partials[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Unweighted elementwise mean of the deltas.
///
/// Each element is the correctly rounded sum divided by the count, so the
/// result does not depend on the order of `deltas`; identical inputs give
/// back that input exactly.
pub fn fedavg(deltas: &[WeightDelta]) -> Result<WeightDelta, FedError> {
    let first = deltas
        .first()
        .ok_or_else(|| FedError::State("fedavg needs at least one delta".into()))?;
    for d in &deltas[1..] {
        check_layout(&first.params, &d.params)?;
        if d.base_round != first.base_round {
            return Err(FedError::State(format!(
                "deltas against rounds {} and {}",
                first.base_round, d.base_round
            )));
        }
    }
    let n = deltas.len() as f64;
    let params = first
        .params
        .iter()
        .enumerate()
        .map(|(i, (name, t))| {
            let data = (0..t.len())
                .map(|k| {
                    let x0 = t.data()[k];
                    let column = || deltas.iter().map(|d| d.params.iter().nth(i).expect("layout").1.data()[k]);
                    if column().all(|x| x.to_bits() == x0.to_bits()) {
                        x0
                    } else {
                        exact_sum(column()) / n
                    }
                })
                .collect();
            (name.to_string(), Tensor::new(t.shape().to_vec(), data).expect("same shape"))
        })
        .collect();
    Ok(WeightDelta {
        params,
        base_round: first.base_round,
    })
}
