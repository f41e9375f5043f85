//! Central finite-difference validation of the analytic gradients.

use super::{init_params, loss_and_grads, patch_loss_grad, ModelConfig, ModelParams};
use crate::error::Result;
use crate::geom::{fps, Vec3};
use crate::patch::{make_patches, random_mask, PatchSet};
use crate::seed;
use crate::synth::{icosphere, sample_surface};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over every parameter element.
    pub max_rel_error: f64,
    /// (tensor name, relative error) for each tensor's worst element.
    pub per_tensor: Vec<(String, f64)>,
    pub elements_checked: usize,
}

fn rel_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / scale
}

fn fixture(config: &ModelConfig, seed_value: u64) -> Result<PatchSet> {
    let mesh = icosphere(1.0, 2);
    let cloud = sample_surface(&mesh, 400, &mut seed::rng(seed_value, "gradcheck-cloud", &[]))?;
    let centers = fps(&cloud, config.n_centers)?;
    make_patches(&cloud, &centers, config.k)
}

fn loss_only(params: &ModelParams, patches: &PatchSet, mask: &crate::patch::MaskSpec) -> Result<f64> {
    let out = super::forward(params, patches, mask)?;
    let targets: Vec<Vec<Vec3>> = out
        .masked_patches
        .iter()
        .map(|&pi| patches.local_coords[pi].clone())
        .collect();
    Ok(patch_loss_grad(&out.predictions, &targets)?.0)
}

/// Compares analytic gradients of the reconstruction loss against central
/// finite differences (h = 1e-4) for every parameter element of the given
/// configuration. Meant for tiny configurations.
pub fn grad_check(config: &ModelConfig, seed_value: u64) -> Result<GradCheckReport> {
    let patches = fixture(config, seed_value)?;
    let mask = random_mask(
        patches.len(),
        config.mask_ratio,
        seed::derive(seed_value, "gradcheck-mask", &[]),
    )?;
    let params = init_params(config, seed_value)?;
    let (_, analytic) = loss_and_grads(&params, &patches, &mask)?;

    let h = 1e-4;
    let mut per_tensor = Vec::new();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let names: Vec<String> = params.tensors().iter().map(|(n, _)| n.clone()).collect();
    let analytic_list = analytic.tensors();
    for (slot, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        let len = analytic_list[slot].1.data.len();
        for i in 0..len {
            let mut probe = params.clone();
            {
                let mut list = probe.tensors_mut();
                list[slot].1.data[i] += h;
            }
            let plus = loss_only(&probe, &patches, &mask)?;
            {
                let mut list = probe.tensors_mut();
                list[slot].1.data[i] -= 2.0 * h;
            }
            let minus = loss_only(&probe, &patches, &mask)?;
            let fd = (plus - minus) / (2.0 * h);
            let e = rel_error(analytic_list[slot].1.data[i], fd);
            worst = worst.max(e);
            checked += 1;
        }
        max_rel = max_rel.max(worst);
        per_tensor.push((name.clone(), worst));
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        per_tensor,
        elements_checked: checked,
    })
}
