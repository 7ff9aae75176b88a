//! Conditional isotropic Gaussian mixtures with closed-form denoisers.
//!
//! Under the path `x_t = (1 - t) x0 + t eps` with `x0` drawn from a mixture
//! component `N(mu_k, sigma^2 I)`, the noisy point is distributed as
//! `N((1 - t) mu_k, s_t^2 I)` with `s_t^2 = (1 - t)^2 sigma^2 + t^2`, and the
//! per-component posterior mean is
//! `mu_k + (1 - t) sigma^2 / s_t^2 * (x - (1 - t) mu_k)`. Mixing those with
//! the component responsibilities gives the exact `E[x0 | x_t = x, c]`,
//! which is the ground truth every learned quantity is checked against.

use crate::error::{Error, Result};
use crate::field::{Label, VelocityField};
use crate::rng::RandomStream;
use crate::state::StateVec;

pub const DEFAULT_SIGMA: f64 = 0.15;
pub const DEFAULT_COMPONENTS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: StateVec,
}

#[derive(Debug, Clone)]
pub struct ConditionalMixture {
    dim: usize,
    sigma: f64,
    classes: Vec<Vec<Component>>,
    // weight-averaged union of all classes, with the owning class per entry
    null: Vec<Component>,
    null_owner: Vec<usize>,
    preserve_mask: Vec<bool>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ConditionalMixture {
    pub fn new(sigma: f64, classes: Vec<Vec<Component>>, preserve_mask: Vec<bool>) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if classes.is_empty() {
            return Err(Error::invalid("mixture needs at least one class"));
        }
        let dim = preserve_mask.len();
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        for (c, comps) in classes.iter().enumerate() {
            if comps.is_empty() {
                return Err(Error::invalid(format!("class {c} has no components")));
            }
            let mut total = 0.0;
            for comp in comps {
                comp.mean.check_dim(dim)?;
                if !(comp.weight >= 0.0) || !comp.mean.is_finite() {
                    return Err(Error::invalid(format!("class {c} has an invalid component")));
                }
                total += comp.weight;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "class {c} weights sum to {total}, expected 1"
                )));
            }
        }
        let n = classes.len() as f64;
        let mut null = Vec::new();
        let mut null_owner = Vec::new();
        for (c, comps) in classes.iter().enumerate() {
            for comp in comps {
                null.push(Component {
                    weight: comp.weight / n,
                    mean: comp.mean.clone(),
                });
                null_owner.push(c);
            }
        }
        Ok(ConditionalMixture {
            dim,
            sigma,
            classes,
            null,
            null_owner,
            preserve_mask,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// All labels, classes first, then the null label.
    pub fn labels(&self) -> Vec<Label> {
        (0..self.n_classes())
            .map(Label::Class)
            .chain(std::iter::once(Label::Null))
            .collect()
    }

    /// Coordinates that ideal edits leave unchanged.
    pub fn preserve_mask(&self) -> &[bool] {
        &self.preserve_mask
    }

    pub fn components(&self, label: Label) -> Result<&[Component]> {
        match label {
            Label::Null => Ok(&self.null),
            Label::Class(c) => self
                .classes
                .get(c)
                .map(|v| v.as_slice())
                .ok_or_else(|| Error::UnknownLabel(label.to_string())),
        }
    }

    /// Class owning a component index of the null mixture.
    pub fn class_of_null_component(&self, index: usize) -> usize {
        self.null_owner[index]
    }

    /// Span of all component-mean coordinates widened by three standard
    /// deviations on each side. Used as the PSNR peak value.
    pub fn coordinate_span(&self) -> f64 {
        let (lo, hi) = self
            .null
            .iter()
            .flat_map(|c| c.mean.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo + 6.0 * self.sigma
    }

    fn check_time(t: f64) -> Result<()> {
        if t > 0.0 && t <= 1.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "posterior quantities need 0 < t <= 1, got {t}"
            )))
        }
    }

    /// Component responsibilities of `x` at time `t` (t = 0 gives the data
    /// likelihood).
    pub fn responsibilities(&self, label: Label, x: &StateVec, t: f64) -> Result<Vec<f64>> {
        x.check_dim(self.dim)?;
        let comps = self.components(label)?;
        let s2 = (1.0 - t).powi(2) * self.sigma * self.sigma + t * t;
        let logs: Vec<f64> = comps
            .iter()
            .map(|c| {
                let d2: f64 = x
                    .iter()
                    .zip(c.mean.iter())
                    .map(|(xi, mi)| (xi - (1.0 - t) * mi).powi(2))
                    .sum();
                c.weight.ln() - 0.5 * d2 / s2
            })
            .collect();
        let norm = log_sum_exp(&logs);
        Ok(logs.iter().map(|l| (l - norm).exp()).collect())
    }

    /// Exact `E[x0 | x_t = x, c]`.
    pub fn posterior_mean(&self, label: Label, x: &StateVec, t: f64) -> Result<StateVec> {
        Self::check_time(t)?;
        let resp = self.responsibilities(label, x, t)?;
        let comps = self.components(label)?;
        let s2 = (1.0 - t).powi(2) * self.sigma * self.sigma + t * t;
        let shrink = (1.0 - t) * self.sigma * self.sigma / s2;
        let mut out = vec![0.0; self.dim];
        for (r, c) in resp.iter().zip(comps) {
            if *r == 0.0 {
                continue;
            }
            for ((o, xi), mi) in out.iter_mut().zip(x.iter()).zip(c.mean.iter()) {
                *o += r * (mi + shrink * (xi - (1.0 - t) * mi));
            }
        }
        Ok(StateVec::new(out))
    }

    /// Marginal velocity `(x - E[x0 | x, t]) / t`, so that the Tweedie
    /// identity `x - t v = E[x0 | x]` holds by construction.
    pub fn velocity_at(&self, label: Label, x: &StateVec, t: f64) -> Result<StateVec> {
        let mean = self.posterior_mean(label, x, t)?;
        Ok(StateVec::new(
            x.iter().zip(mean.iter()).map(|(xi, mi)| (xi - mi) / t).collect(),
        ))
    }

    pub fn sample(&self, label: Label, stream: &mut RandomStream) -> Result<StateVec> {
        let comps = self.components(label)?;
        let u = stream.uniform();
        let mut acc = 0.0;
        let mut chosen = comps.len() - 1;
        for (i, c) in comps.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let noise = stream.normal_vec(self.dim);
        Ok(comps[chosen].mean.axpy(self.sigma, &noise))
    }

    pub fn log_density(&self, label: Label, x: &StateVec) -> Result<f64> {
        x.check_dim(self.dim)?;
        let comps = self.components(label)?;
        let s2 = self.sigma * self.sigma;
        let log_norm = -0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * s2).ln();
        let logs: Vec<f64> = comps
            .iter()
            .map(|c| c.weight.ln() + log_norm - 0.5 * (x - &c.mean).norm_sq() / s2)
            .collect();
        Ok(log_sum_exp(&logs))
    }

    /// Index of the component with the highest responsibility for `x`.
    pub fn assign_mode(&self, label: Label, x: &StateVec) -> Result<usize> {
        let resp = self.responsibilities(label, x, 0.0)?;
        Ok(resp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0)
    }

    /// Class whose component best explains `x` (semantic proxy).
    pub fn classify(&self, x: &StateVec) -> Result<usize> {
        let k = self.assign_mode(Label::Null, x)?;
        Ok(self.class_of_null_component(k))
    }
}

impl VelocityField for ConditionalMixture {
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &StateVec, t: f64, label: Label) -> Result<StateVec> {
        self.velocity_at(label, x, t)
    }
}

pub fn analytic_posterior_mean(
    mix: &ConditionalMixture,
    label: Label,
    x: &StateVec,
    t: f64,
) -> Result<StateVec> {
    mix.posterior_mean(label, x, t)
}

pub fn analytic_velocity(
    mix: &ConditionalMixture,
    label: Label,
    x: &StateVec,
    t: f64,
) -> Result<StateVec> {
    mix.velocity_at(label, x, t)
}

/// Parameters of a paired mixture: every class has `components` modes that
/// share their preserved coordinates across classes ("backgrounds") and
/// differ only in the first `edit_dims` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedMixtureSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub edit_dims: usize,
    pub components: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl PairedMixtureSpec {
    pub fn new(n_classes: usize, dim: usize, edit_dims: usize, seed: u64) -> Self {
        PairedMixtureSpec {
            n_classes,
            dim,
            edit_dims,
            components: DEFAULT_COMPONENTS,
            sigma: DEFAULT_SIGMA,
            seed,
        }
    }

    pub fn build(&self) -> Result<ConditionalMixture> {
        if self.n_classes < 2 {
            return Err(Error::invalid("paired mixture needs at least two classes"));
        }
        if self.edit_dims == 0 || self.edit_dims >= self.dim {
            return Err(Error::invalid(format!(
                "need 1 <= edit_dims < dim, got edit_dims={} dim={}",
                self.edit_dims, self.dim
            )));
        }
        if self.components == 0 {
            return Err(Error::invalid("components must be positive"));
        }
        let keep = self.dim - self.edit_dims;
        let min_sep = 4.0 * self.sigma;
        let mut stream = RandomStream::new(self.seed);
        let draw = |n: usize, s: &mut RandomStream| -> Vec<f64> {
            (0..n).map(|_| 2.0 * s.uniform() - 1.0).collect()
        };
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };

        // Sequential rejection; restart the whole set when a point cannot be
        // placed next to the ones already drawn.
        let place = |count: usize, width: usize, s: &mut RandomStream| -> Option<Vec<Vec<f64>>> {
            'restart: for _ in 0..100_000 {
                let mut pts: Vec<Vec<f64>> = Vec::with_capacity(count);
                while pts.len() < count {
                    let mut placed = false;
                    for _ in 0..64 {
                        let cand = draw(width, s);
                        if pts.iter().all(|b| dist(b, &cand) >= min_sep) {
                            pts.push(cand);
                            placed = true;
                            break;
                        }
                    }
                    if !placed {
                        continue 'restart;
                    }
                }
                return Some(pts);
            }
            None
        };
        let backgrounds = place(self.components, keep, &mut stream)
            .ok_or_else(|| Error::invalid("could not place separated backgrounds"))?;
        let edits = place(self.n_classes * self.components, self.edit_dims, &mut stream)
            .ok_or_else(|| Error::invalid("could not place separated class modes"))?;
        let weight = 1.0 / self.components as f64;
        let classes = (0..self.n_classes)
            .map(|c| {
                (0..self.components)
                    .map(|k| {
                        let mut mean = edits[c * self.components + k].clone();
                        mean.extend_from_slice(&backgrounds[k]);
                        Component {
                            weight,
                            mean: StateVec::new(mean),
                        }
                    })
                    .collect()
            })
            .collect();
        let mask = (0..self.dim).map(|i| i >= self.edit_dims).collect();
        ConditionalMixture::new(self.sigma, classes, mask)
    }
}

pub fn make_paired_mixture(
    n_classes: usize,
    dim: usize,
    edit_dims: usize,
    seed: u64,
) -> Result<ConditionalMixture> {
    PairedMixtureSpec::new(n_classes, dim, edit_dims, seed).build()
}

/// A source sample with a source/target label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EditTask {
    pub id: usize,
    pub c_src: Label,
    pub c_tgt: Label,
    pub x_src: StateVec,
    pub preserve_mask: Vec<bool>,
}

/// Deterministic task list: label pairs cycle through all ordered class
/// pairs; task `i` draws its source from substream `i` of `seed`.
pub fn make_edit_tasks(mix: &ConditionalMixture, count: usize, seed: u64) -> Result<Vec<EditTask>> {
    let n = mix.n_classes();
    if n < 2 {
        return Err(Error::invalid("edit tasks need two distinct classes"));
    }
    if !mix.preserve_mask().iter().any(|&m| m) {
        return Err(Error::invalid("preserve mask has no coordinates"));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let root = RandomStream::new(seed);
    (0..count)
        .map(|i| {
            let (a, b) = pairs[i % pairs.len()];
            let mut s = root.substream(i as u64);
            Ok(EditTask {
                id: i,
                c_src: Label::Class(a),
                c_tgt: Label::Class(b),
                x_src: mix.sample(Label::Class(a), &mut s)?,
                preserve_mask: mix.preserve_mask().to_vec(),
            })
        })
        .collect()
}
