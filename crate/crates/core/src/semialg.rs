//! Slack-variable lifting: turn `h(x) > 0` constraints into equalities on an
//! extended variety, sample there, then drop the slack coordinates.
//!
//! Each inequality h_i(x) > 0 gains a slack variable s_i and becomes the
//! equality h_i(x) - s_i^2 = 0; a point on the lifted variety projects to a
//! point with h_i(x) = s_i^2 >= 0. The reciprocal form s^2 h(x) - 1 = 0 is
//! deliberately not offered: it pushes the slack to infinity near the
//! boundary, which breaks box-truncated samplers.

use thiserror::Error;

use crate::batch::SampleBatch;
use crate::poly::{PolyError, PolySystem, Polynomial, VarContext};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LiftError {
    #[error("generated name `{name}` collides with a user variable")]
    NameCollision { name: String },
    #[error("unknown variable `{name}`")]
    UnknownVariable { name: String },
    #[error("sample dimension {got} does not match the lifted dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// A pure-equality system produced by [`lift_with_slacks`], remembering how
/// to get back to the original coordinates.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    lifted: PolySystem,
    original_dim: usize,
    slack_map: Vec<usize>,
    identity: bool,
}

impl LiftedSystem {
    pub fn system(&self) -> &PolySystem {
        &self.lifted
    }

    /// Number of original (non-slack) coordinates.
    pub fn original_dim(&self) -> usize {
        self.original_dim
    }

    /// Variable index of the slack attached to each inequality, in order.
    pub fn slack_map(&self) -> &[usize] {
        &self.slack_map
    }

    /// True when the input had no inequalities and the lift changed nothing.
    pub fn is_identity(&self) -> bool {
        self.identity
    }
}

/// Append one slack variable per inequality and rewrite h_i > 0 as
/// h_i - s_i^2 = 0. Original equalities are kept first, in order. A system
/// with no inequalities comes back unchanged with the identity flag set.
pub fn lift_with_slacks(sys: &PolySystem) -> Result<LiftedSystem, LiftError> {
    let n = sys.n_vars();
    let l = sys.n_inequalities();
    if l == 0 {
        return Ok(LiftedSystem {
            lifted: sys.clone(),
            original_dim: n,
            slack_map: Vec::new(),
            identity: true,
        });
    }
    let mut names: Vec<String> = sys.context().names().to_vec();
    for i in 1..=l {
        let name = format!("_s{i}");
        if sys.context().index_of(&name).is_some() {
            return Err(LiftError::NameCollision { name });
        }
        names.push(name);
    }
    let ctx = VarContext::new(names)?;
    let map: Vec<usize> = (0..n).collect();
    let mut eqs: Vec<Polynomial> =
        sys.equalities().iter().map(|p| p.embed(&ctx, &map)).collect();
    let mut slack_map = Vec::with_capacity(l);
    for (i, h) in sys.inequalities().iter().enumerate() {
        let slack = Polynomial::variable(&ctx, n + i);
        let slack_sq = slack.mul(&slack)?;
        eqs.push(h.embed(&ctx, &map).sub(&slack_sq)?);
        slack_map.push(n + i);
    }
    let lifted = PolySystem::equalities_only(&ctx, eqs)?;
    Ok(LiftedSystem { lifted, original_dim: n, slack_map, identity: false })
}

/// Drop the slack coordinates from a batch sampled on the lifted variety.
/// Row order, count, and per-row metadata are preserved.
pub fn marginalize(samples: &SampleBatch, lift: &LiftedSystem) -> Result<SampleBatch, LiftError> {
    if samples.dim() != lift.lifted.n_vars() {
        return Err(LiftError::DimensionMismatch {
            expected: lift.lifted.n_vars(),
            got: samples.dim(),
        });
    }
    let keep: Vec<usize> = (0..lift.original_dim).collect();
    Ok(samples.select_columns(&keep).expect("column indices in range"))
}

/// Replace one variable by the square of a fresh variable: a sample value t
/// for the fresh variable recovers the original as t^2 >= 0. The fresh
/// variable takes the replaced variable's slot; the preferred name is `t`,
/// falling back to `_t1`, `_t2`, ... on collision.
pub fn square_substitute(sys: &PolySystem, var: &str) -> Result<PolySystem, LiftError> {
    let ctx = sys.context();
    let k = ctx.index_of(var).ok_or_else(|| LiftError::UnknownVariable { name: var.into() })?;
    let taken = |name: &str| ctx.names().iter().enumerate().any(|(i, n)| i != k && n == name);
    let mut fresh = String::from("t");
    let mut counter = 0usize;
    while taken(&fresh) {
        counter += 1;
        fresh = format!("_t{counter}");
    }
    let mut names = ctx.names().to_vec();
    names[k] = fresh;
    let new_ctx = VarContext::new(names)?;
    let t = Polynomial::variable(&new_ctx, k);
    let t_sq = t.mul(&t)?;
    let map: Vec<usize> = (0..ctx.len()).collect();
    let subst = |p: &Polynomial| p.substitute(k, &t_sq, &new_ctx, &map);
    PolySystem::new(
        &new_ctx,
        sys.equalities().iter().map(&subst).collect(),
        sys.inequalities().iter().map(&subst).collect(),
    )
    .map_err(LiftError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::{RowMeta, SampleBatch};

    fn disc() -> PolySystem {
        let ctx = VarContext::new(["x", "y"]).unwrap();
        let h = Polynomial::parse("1 - x^2 - y^2", &ctx).unwrap();
        PolySystem::new(&ctx, Vec::new(), vec![h]).unwrap()
    }

    #[test]
    fn disc_lifts_to_single_equality() {
        let lift = lift_with_slacks(&disc()).unwrap();
        assert!(!lift.is_identity());
        let sys = lift.system();
        assert_eq!(sys.context().names(), ["x", "y", "_s1"]);
        assert_eq!(sys.n_equalities(), 1);
        assert_eq!(sys.n_inequalities(), 0);
        assert_eq!(sys.equalities()[0].to_string(), "-x^2 - y^2 - _s1^2 + 1");
        // On the lifted variety: s^2 = 1 - x^2 - y^2.
        let v = sys.eval_equalities(&[0.6, 0.0, 0.8]).unwrap();
        assert!(v[0].abs() < 1e-15);
    }

    #[test]
    fn slacks_at_zero_recover_boundary() {
        let lift = lift_with_slacks(&disc()).unwrap();
        let boundary = lift.system().eval_equalities(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(boundary[0], 0.0);
        let inside = lift.system().eval_equalities(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(inside[0], 1.0);
    }

    #[test]
    fn equalities_precede_slack_equalities() {
        let ctx = VarContext::new(["x", "y"]).unwrap();
        let sys = PolySystem::new(
            &ctx,
            vec![Polynomial::parse("x + y", &ctx).unwrap()],
            vec![
                Polynomial::parse("x", &ctx).unwrap(),
                Polynomial::parse("1 - y", &ctx).unwrap(),
            ],
        )
        .unwrap();
        let lift = lift_with_slacks(&sys).unwrap();
        assert_eq!(lift.system().n_equalities(), 3);
        assert_eq!(lift.slack_map(), &[2, 3]);
        assert_eq!(lift.system().equalities()[0].to_string(), "x + y");
        assert_eq!(lift.system().equalities()[1].to_string(), "-_s1^2 + x");
        assert_eq!(lift.system().equalities()[2].to_string(), "-_s2^2 - y + 1");
    }

    #[test]
    fn identity_lift_flagged() {
        let ctx = VarContext::new(["x"]).unwrap();
        let sys =
            PolySystem::equalities_only(&ctx, vec![Polynomial::parse("x", &ctx).unwrap()]).unwrap();
        let lift = lift_with_slacks(&sys).unwrap();
        assert!(lift.is_identity());
        assert_eq!(lift.system().n_vars(), 1);
    }

    #[test]
    fn slack_name_collision_rejected() {
        let ctx = VarContext::new(["x", "_s1"]).unwrap();
        let sys = PolySystem::new(
            &ctx,
            Vec::new(),
            vec![Polynomial::parse("x", &ctx).unwrap()],
        )
        .unwrap();
        assert!(matches!(
            lift_with_slacks(&sys),
            Err(LiftError::NameCollision { name }) if name == "_s1"
        ));
    }

    #[test]
    fn marginalize_drops_slacks_and_keeps_meta() {
        let lift = lift_with_slacks(&disc()).unwrap();
        let names: Vec<String> =
            lift.system().context().names().iter().cloned().collect();
        let mut batch = SampleBatch::new(names);
        batch.push_row(
            &[0.6, 0.0, 0.8],
            RowMeta {
                proposal_index: 7,
                chain_id: 0,
                log_density: -0.5,
                residual_norm: 0.0,
                accepted: true,
            },
        );
        let out = marginalize(&batch, &lift).unwrap();
        assert_eq!(out.dim(), 2);
        assert_eq!(out.len(), 1);
        assert_eq!(out.row(0), &[0.6, 0.0]);
        assert_eq!(out.meta(0).proposal_index, 7);

        let empty = SampleBatch::new(vec!["x".into(), "y".into(), "_s1".into()]);
        assert_eq!(marginalize(&empty, &lift).unwrap().len(), 0);

        let wrong = SampleBatch::new(vec!["x".into(), "y".into()]);
        assert!(matches!(
            marginalize(&wrong, &lift),
            Err(LiftError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn square_substitute_example() {
        let ctx = VarContext::new(["x", "y"]).unwrap();
        let sys = PolySystem::equalities_only(
            &ctx,
            vec![Polynomial::parse("x + y - 1", &ctx).unwrap()],
        )
        .unwrap();
        let out = square_substitute(&sys, "x").unwrap();
        assert_eq!(out.context().names(), ["t", "y"]);
        assert_eq!(out.equalities()[0].to_string(), "t^2 + y - 1");
    }

    #[test]
    fn square_substitute_doubles_degree_in_that_variable() {
        let ctx = VarContext::new(["x", "y"]).unwrap();
        let sys = PolySystem::equalities_only(
            &ctx,
            vec![Polynomial::parse("x^3 + x*y + y^2", &ctx).unwrap()],
        )
        .unwrap();
        let out = square_substitute(&sys, "x").unwrap();
        assert_eq!(out.equalities()[0].to_string(), "t^6 + t^2*y + y^2");
    }

    #[test]
    fn square_substitute_fresh_name_avoids_collision() {
        let ctx = VarContext::new(["x", "t"]).unwrap();
        let sys = PolySystem::equalities_only(
            &ctx,
            vec![Polynomial::parse("x + t", &ctx).unwrap()],
        )
        .unwrap();
        let out = square_substitute(&sys, "x").unwrap();
        assert_eq!(out.context().names(), ["_t1", "t"]);
        assert_eq!(out.equalities()[0].to_string(), "_t1^2 + t");

        assert!(matches!(
            square_substitute(&sys, "z"),
            Err(LiftError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn square_substitute_replacing_t_itself_keeps_name() {
        // Replacing the variable named `t` frees its own slot.
        let ctx = VarContext::new(["t", "y"]).unwrap();
        let sys = PolySystem::equalities_only(
            &ctx,
            vec![Polynomial::parse("t + y", &ctx).unwrap()],
        )
        .unwrap();
        let out = square_substitute(&sys, "t").unwrap();
        assert_eq!(out.context().names(), ["t", "y"]);
        assert_eq!(out.equalities()[0].to_string(), "t^2 + y");
    }
}
