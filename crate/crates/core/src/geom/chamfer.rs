use super::{grid::PointGrid, Vec3};
use crate::error::{Error, Result};

/// Symmetric squared-l2 Chamfer distance between two point sets:
/// mean over `a` of the squared distance to its nearest point in `b`,
/// plus the same with the roles swapped.
pub fn chamfer_l2(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(directed_mean_sq(a, b) + directed_mean_sq(b, a))
}

fn directed_mean_sq(from: &[Vec3], to: &[Vec3]) -> f64 {
    let total: f64 = if from.len() * to.len() <= 16_384 {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    } else {
        let grid = PointGrid::build(to);
        from.iter().map(|p| grid.nearest_sq(p)).sum()
    };
    total / from.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_are_zero() {
        let a = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)];
        assert_eq!(chamfer_l2(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn singleton_pair() {
        let a = vec![Vec3::zeros()];
        let b = vec![Vec3::new(3.0, 4.0, 0.0)];
        assert_eq!(chamfer_l2(&a, &b).unwrap(), 50.0);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(
            chamfer_l2(&[], &[Vec3::zeros()]),
            Err(Error::EmptySet)
        ));
    }
}
