//! Statistical and structural checks on the samplers that need more than a
//! unit test: symplectic volume preservation measured by finite differences,
//! stationary spread of the chain around a variety, and the slack-lift
//! round trip for an inequality-carved region.

use nalgebra::DMatrix;
use variety_core::catalog;
use variety_core::hmc::{self, HmcConfig, HmcInit};
use variety_core::rejection::{self, RejectionConfig, RejectionMode};
use variety_core::semialg;
use variety_core::{AxisBox, DensityModel};

fn circle_model(sigma2: f64) -> DensityModel {
    let sys = catalog::build_default("circle").unwrap().system;
    DensityModel::vn(sys, sigma2).unwrap()
}

/// The leapfrog update is symplectic, so the (x, p) -> (x', p') map has
/// jacobian determinant exactly one. Differencing the integrator gives the
/// jacobian without touching any internals.
#[test]
fn leapfrog_preserves_phase_space_volume() {
    let model = circle_model(0.01);
    let z0 = [1.05, 0.1, 0.3, -0.2];
    let h = 1e-6;
    let flow = |z: &[f64; 4]| {
        let out = hmc::leapfrog(&model, &z[0..2], &z[2..4], 0.05, 10, 1.0).unwrap();
        [out.position[0], out.position[1], out.momentum[0], out.momentum[1]]
    };
    let mut jac = DMatrix::zeros(4, 4);
    for k in 0..4 {
        let mut zp = z0;
        let mut zm = z0;
        zp[k] += h;
        zm[k] -= h;
        let (fp, fm) = (flow(&zp), flow(&zm));
        for i in 0..4 {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let det = jac.determinant();
    assert!((det - 1.0).abs() < 1e-6, "flow jacobian determinant {det}");
}

/// Near the unit circle the normalized residual is the signed distance
/// r - 1 (to first order), so stationary draws should show std(r - 1)
/// close to the dispersion parameter.
#[test]
fn chain_spread_around_circle_matches_dispersion() {
    let sigma = 0.05;
    let model = circle_model(sigma * sigma);
    let mut cfg = HmcConfig::new(HmcInit::Overdispersed(AxisBox::cube(-1.5, 1.5, 2).unwrap()));
    cfg.n_chains = 4;
    cfg.n_warmup = 1000;
    cfg.n_samples = 2000;
    cfg.seed = 71;
    let batch = hmc::run_chains(&model, &cfg).unwrap();
    assert_eq!(batch.len(), 8000);

    let devs: Vec<f64> = batch
        .rows()
        .map(|r| (r[0] * r[0] + r[1] * r[1]).sqrt() - 1.0)
        .collect();
    let mean = devs.iter().sum::<f64>() / devs.len() as f64;
    let var = devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
        / (devs.len() - 1) as f64;
    let std = var.sqrt();
    assert!(
        (std - sigma).abs() < 0.15 * sigma,
        "std(r - 1) = {std}, dispersion {sigma}"
    );
}

/// Disc region via one slack variable: sample the lifted sphere-like
/// variety, drop the slack column, and check the marginal stays inside the
/// disc up to the dispersion scale.
#[test]
fn lifted_disc_marginal_respects_the_inequality() {
    let sigma = 0.05;
    let disc = catalog::build_default("disc").unwrap().system;
    let lift = semialg::lift_with_slacks(&disc).unwrap();
    assert!(!lift.is_identity());
    let model = DensityModel::vn(lift.system().clone(), sigma * sigma).unwrap();

    let cfg = RejectionConfig {
        bounds: AxisBox::cube(-1.5, 1.5, 3).unwrap(),
        n_proposals: 100_000,
        seed: 72,
        mode: RejectionMode::Density,
    };
    let lifted_samples = rejection::sample_rejection(&model, &cfg).unwrap();
    assert!(
        lifted_samples.len() > 1000,
        "only {} accepted draws",
        lifted_samples.len()
    );

    let marginal = semialg::marginalize(&lifted_samples, &lift).unwrap();
    assert_eq!(marginal.dim(), 2);
    assert_eq!(marginal.len(), lifted_samples.len());

    let inside = marginal
        .rows()
        .filter(|r| 1.0 - r[0] * r[0] - r[1] * r[1] > -3.0 * sigma)
        .count();
    let frac = inside as f64 / marginal.len() as f64;
    assert!(frac >= 0.95, "only {frac:.3} of draws within 3 sigma of the disc");
}
