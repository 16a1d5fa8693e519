//! Reverse-mode gradient computation over recorded tensor lineages.
//!
//! `backward` walks the lineage graph of a scalar loss in reverse
//! topological order, accumulating gradients additively across fan-out.
//! Every tensor with `requires_grad` that is reachable from the loss ends
//! up with a populated grad buffer.

use std::collections::HashMap;

use crate::tensor::{Element, Result, Tensor, TensorError};

/// Backpropagate from a scalar loss.
///
/// Gradients accumulate additively both across fan-out within one call and
/// across calls (until `zero_grad`). Calling `backward` a second time on
/// the same loss tensor is an error: the graph is considered consumed.
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarBackward { numel: loss.numel() });
    }
    if !loss.has_lineage() {
        return Err(TensorError::NoLineage);
    }
    if loss
        .inner
        .backward_consumed
        .swap(true, std::sync::atomic::Ordering::SeqCst)
    {
        return Err(TensorError::BackwardConsumed);
    }

    let order = topo_order(loss);
    let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
    grads.insert(loss.id(), vec![T::one()]);

    for t in order.iter().rev() {
        let grad_out = match grads.remove(&t.id()) {
            Some(g) => g,
            None => continue,
        };
        if t.requires_grad() {
            t.accumulate_grad(&grad_out);
        }
        let lineage = match &t.inner.lineage {
            Some(l) => l,
            None => continue,
        };
        let needs: Vec<bool> = lineage.parents.iter().map(|p| p.on_grad_path()).collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let parent_grads = (lineage.backward)(t.data(), &grad_out, &needs);
        debug_assert_eq!(parent_grads.len(), lineage.parents.len());
        for (parent, grad) in lineage.parents.iter().zip(parent_grads) {
            let grad = match grad {
                Some(g) => g,
                None => continue,
            };
            debug_assert_eq!(grad.len(), parent.numel());
            match grads.get_mut(&parent.id()) {
                Some(existing) => {
                    for (e, g) in existing.iter_mut().zip(&grad) {
                        *e = *e + *g;
                    }
                }
                None => {
                    grads.insert(parent.id(), grad);
                }
            }
        }
    }
    Ok(())
}

/// Iterative post-order DFS; result is a valid topological order (parents
/// before children).
fn topo_order<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    // (tensor, children_pushed)
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if visited.contains_key(&t.id()) {
            continue;
        }
        visited.insert(t.id(), ());
        stack.push((t.clone(), true));
        if let Some(lineage) = &t.inner.lineage {
            for p in &lineage.parents {
                if !visited.contains_key(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

/// Result of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Worst relative error over all checked elements.
    pub max_rel_error: f64,
    /// Flat index of the worst element within the concatenated inputs.
    pub worst_index: usize,
    /// Analytic and numerical values at the worst element.
    pub analytic: f64,
    pub numeric: f64,
}

/// Central finite-difference step used by the 64-bit gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Compare analytic gradients against central finite differences at 64-bit
/// precision.
///
/// `f` must map the given leaf inputs to a scalar; it is re-evaluated with
/// each input element perturbed by ±h. Relative error uses
/// |a-n| / max(|a|, |n|, 1e-6) so near-zero gradients are compared on an
/// absolute scale.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> GradCheck
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let loss = f(inputs);
    assert_eq!(loss.numel(), 1, "grad_check requires a scalar objective");
    backward(&loss).expect("backward failed during grad_check");

    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| {
            t.grad()
                .unwrap_or_else(|| panic!("input {:?} received no gradient", t))
        })
        .collect();

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut flat = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.numel() {
            let numeric = {
                let eval = |delta: f64| -> f64 {
                    let perturbed: Vec<Tensor<f64>> = inputs
                        .iter()
                        .enumerate()
                        .map(|(tj, tt)| {
                            if tj == ti {
                                let mut d = tt.data().to_vec();
                                d[ei] += delta;
                                Tensor::from_vec(tt.shape().to_vec(), d, false)
                            } else {
                                tt.detached(false)
                            }
                        })
                        .collect();
                    f(&perturbed).item()
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            };
            let a = analytic[ti][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.max_rel_error {
                worst = GradCheck {
                    max_rel_error: rel,
                    worst_index: flat,
                    analytic: a,
                    numeric,
                };
            }
            flat += 1;
        }
    }
    for t in inputs {
        t.zero_grad();
    }
    worst
}

/// Deterministic standard-normal tensor for tests and gradient checks.
pub fn randn_tensor<T: Element>(shape: Vec<usize>, seed: u64, requires_grad: bool) -> Tensor<T> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(v)
        })
        .collect();
    Tensor::from_vec(shape, data, requires_grad)
}
