use crate::error::{ensure_dim, Result};
use crate::features::{ScoreVector, SpaceTag};

/// Sum of the two log-scores, i.e. the log of the product of likelihoods.
pub fn combined_score(zp_scores: &ScoreVector, zf_scores: &ScoreVector) -> Result<ScoreVector> {
    ensure_dim(zp_scores.len(), zf_scores.len(), "combined score lengths")?;
    ScoreVector::new(&zp_scores.values + &zf_scores.values, SpaceTag::Combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adds_elementwise() {
        let a = ScoreVector::new(array![-1.0, -2.0], SpaceTag::Pretrained).unwrap();
        let b = ScoreVector::new(array![-3.0, -1.0], SpaceTag::Finetuned).unwrap();
        let c = combined_score(&a, &b).unwrap();
        assert_eq!(c.values, array![-4.0, -3.0]);
        assert_eq!(c.space, SpaceTag::Combined);
    }

    #[test]
    fn length_mismatch() {
        let a = ScoreVector::new(array![0.0], SpaceTag::Pretrained).unwrap();
        let b = ScoreVector::new(array![0.0, 1.0], SpaceTag::Finetuned).unwrap();
        assert!(combined_score(&a, &b).is_err());
    }
}
