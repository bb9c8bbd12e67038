//! Out-of-sample encoding and translation between the q1- and q2-bit code spaces.

use nalgebra::DMatrix;

use crate::codes::CodeMatrix;
use crate::hashfn::{kernel_features, KlrModel};
use crate::model::ModelMeta;
use crate::optimizer::CorrelationPair;
use crate::{Error, Modality, Result};

/// Everything needed to hash and compare unseen samples of both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub h: CorrelationPair,
    /// q1 hash functions over d1 features.
    pub klr_x: KlrModel,
    /// q2 hash functions over d2 features.
    pub klr_y: KlrModel,
    pub meta: ModelMeta,
}

impl TrainedModel {
    pub fn q1(&self) -> usize {
        self.klr_x.bits()
    }

    pub fn q2(&self) -> usize {
        self.klr_y.bits()
    }

    pub fn d1(&self) -> usize {
        self.klr_x.anchors.dim()
    }

    pub fn d2(&self) -> usize {
        self.klr_y.anchors.dim()
    }

    pub fn hash_functions(&self, modality: Modality) -> &KlrModel {
        match modality {
            Modality::X => &self.klr_x,
            Modality::Y => &self.klr_y,
        }
    }

    /// Native code length of a modality.
    pub fn bits(&self, modality: Modality) -> usize {
        self.hash_functions(modality).bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Translation {
    /// q1-bit X codes to the q2-bit space, through H2.
    XToQ2,
    /// q2-bit Y codes to the q1-bit space, through H1ᵀ.
    YToQ1,
}

/// Native-length codes for unseen samples of `modality`.
///
/// A bit is +1 when `Pr(+1) ≥ Pr(−1)`, i.e. when the bit's kernel score is
/// non-negative.
pub fn encode(features: &DMatrix<f64>, model: &TrainedModel, modality: Modality) -> Result<CodeMatrix> {
    let hf = model.hash_functions(modality);
    if features.nrows() == 0 {
        return Ok(CodeMatrix::empty(hf.bits()));
    }
    if features.ncols() != hf.anchors.dim() {
        return Err(Error::Dimension(format!(
            "modality {modality} expects {} feature dims, got {}",
            hf.anchors.dim(),
            features.ncols()
        )));
    }
    let k = kernel_features(features, &hf.anchors)?;
    // sign(Pr(+1) − Pr(−1)) = sign(σ(z) − σ(−z)) = sign(z)
    Ok(CodeMatrix::from_signs(&(k * &hf.weights)))
}

/// `sign(codes · m)` with width checking.
pub fn translate_with(codes: &CodeMatrix, m: &DMatrix<f64>) -> Result<CodeMatrix> {
    if codes.bits() != m.nrows() {
        return Err(Error::Dimension(format!(
            "code width {} does not match translation matrix with {} rows",
            codes.bits(),
            m.nrows()
        )));
    }
    Ok(CodeMatrix::from_signs(&(codes.as_matrix() * m)))
}

/// Maps codes into the other modality's code space.
pub fn translate(codes: &CodeMatrix, model: &TrainedModel, direction: Translation) -> Result<CodeMatrix> {
    match direction {
        Translation::XToQ2 => translate_with(codes, &model.h.h2),
        Translation::YToQ1 => translate_with(codes, &model.h.h1.transpose()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::sign;
    use crate::hashfn::{AnchorScheme, AnchorSet};

    fn toy_model(q1: usize, q2: usize) -> TrainedModel {
        let klr = |d: usize, q: usize| KlrModel {
            anchors: AnchorSet { anchors: DMatrix::zeros(2, d), scheme: AnchorScheme::Rnd, gamma: 1.0 },
            weights: DMatrix::zeros(3, q),
            eta: 0.01,
        };
        TrainedModel {
            h: CorrelationPair { h1: DMatrix::identity(q1, q2), h2: DMatrix::identity(q1, q2) },
            klr_x: klr(4, q1),
            klr_y: klr(5, q2),
            meta: ModelMeta::default(),
        }
    }

    #[test]
    fn zero_weights_encode_all_plus_one() {
        let m = toy_model(3, 3);
        let c = encode(&DMatrix::from_element(2, 4, 0.3), &m, Modality::X).unwrap();
        assert!(c.iter().all(|v| *v == 1.0));
        assert_eq!(c.bits(), 3);
    }

    #[test]
    fn empty_input_encodes_to_empty() {
        let m = toy_model(3, 6);
        let c = encode(&DMatrix::zeros(0, 0), &m, Modality::Y).unwrap();
        assert_eq!((c.rows(), c.bits()), (0, 6));
    }

    #[test]
    fn wrong_dimension_rejected() {
        let m = toy_model(3, 3);
        assert!(matches!(encode(&DMatrix::zeros(1, 5), &m, Modality::X), Err(Error::Dimension(_))));
        assert!("z".parse::<Modality>().is_err());
    }

    #[test]
    fn identity_and_negation() {
        let mut m = toy_model(4, 4);
        let c = CodeMatrix::new(DMatrix::from_row_slice(1, 4, &[1., -1., -1., 1.])).unwrap();
        assert_eq!(translate(&c, &m, Translation::XToQ2).unwrap(), c);
        m.h.h2 = -DMatrix::<f64>::identity(4, 4);
        let neg = translate(&c, &m, Translation::XToQ2).unwrap();
        assert_eq!(neg.as_matrix(), &-c.as_matrix());
    }

    #[test]
    fn translated_widths() {
        let m = toy_model(3, 5);
        let cx = CodeMatrix::from_signs(&DMatrix::from_element(2, 3, 1.0));
        let cy = CodeMatrix::from_signs(&DMatrix::from_element(2, 5, -1.0));
        assert_eq!(translate(&cx, &m, Translation::XToQ2).unwrap().bits(), 5);
        assert_eq!(translate(&cy, &m, Translation::YToQ1).unwrap().bits(), 3);
        assert!(translate(&cy, &m, Translation::XToQ2).is_err());
    }

    #[test]
    fn single_row_against_explicit_product() {
        let c = CodeMatrix::new(DMatrix::from_row_slice(1, 3, &[1., -1., 1.])).unwrap();
        let h = DMatrix::from_row_slice(3, 5, &[
            0.3, -1.2, 0.5, 0.0, 2.0,
            -0.7, 0.4, 0.1, 0.9, -0.3,
            0.2, 0.2, -0.8, 0.4, 0.6,
        ]);
        let got = translate_with(&c, &h).unwrap();
        for j in 0..5 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += c[(0, k)] * h[(k, j)];
            }
            assert_eq!(got[(0, j)], sign(acc));
        }
    }
}
