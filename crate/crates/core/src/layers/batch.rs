use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::groups::GroupElement;
use crate::repalgebra::{apply_power, TensorType, TypedFeature};

/// A batch of [`TypedFeature`]s in channel-major layout.
///
/// The block for term `c·T_m` is a `[c, batch·d^m]` tensor whose column
/// `b·d^m + t` holds component `t` of sample `b`. Channel mixing is then a
/// single matrix product on the left.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    ty: TensorType,
    d: usize,
    batch: usize,
    blocks: Vec<Tensor>,
}

impl FeatureBatch {
    pub fn new(ty: TensorType, d: usize, batch: usize, blocks: Vec<Tensor>) -> Result<Self> {
        if blocks.len() != ty.terms().len() {
            return Err(shape_err("batch", format!("{} blocks for {ty}", blocks.len())));
        }
        for (t, b) in ty.terms().iter().zip(&blocks) {
            let want = [t.multiplicity, batch * d.pow(t.order as u32)];
            if b.shape() != want {
                return Err(shape_err(
                    "batch",
                    format!("block for T{} has shape {:?}, expected {want:?}", t.order, b.shape()),
                ));
            }
        }
        Ok(Self { ty, d, batch, blocks })
    }

    pub fn from_features(features: &[TypedFeature]) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| shape_err("batch", "no samples"))?;
        let (ty, d, batch) = (first.ty().clone(), first.dim(), features.len());
        let mut blocks = Vec::with_capacity(ty.terms().len());
        for (bi, t) in ty.terms().iter().enumerate() {
            let k = d.pow(t.order as u32);
            let cols = batch * k;
            let mut data = vec![0.0; t.multiplicity * cols];
            for (s, f) in features.iter().enumerate() {
                if f.ty() != &ty || f.dim() != d {
                    return Err(Error::InvalidType(format!(
                        "sample {s} has type {} (d={}), expected {ty} (d={d})",
                        f.ty(),
                        f.dim()
                    )));
                }
                for (c, chunk) in f.blocks()[bi].chunks(k).enumerate() {
                    data[c * cols + s * k..c * cols + (s + 1) * k].copy_from_slice(chunk);
                }
            }
            blocks.push(Tensor::matrix(t.multiplicity, cols, data)?);
        }
        Self::new(ty, d, batch, blocks)
    }

    pub fn to_features(&self) -> Result<Vec<TypedFeature>> {
        (0..self.batch).map(|s| self.sample(s)).collect()
    }

    pub fn sample(&self, s: usize) -> Result<TypedFeature> {
        let blocks = self
            .ty
            .terms()
            .iter()
            .zip(&self.blocks)
            .map(|(t, b)| {
                let k = self.d.pow(t.order as u32);
                let cols = self.batch * k;
                (0..t.multiplicity)
                    .flat_map(|c| b.data()[c * cols + s * k..c * cols + (s + 1) * k].iter().copied())
                    .collect()
            })
            .collect();
        TypedFeature::new(self.ty.clone(), self.d, blocks)
    }

    pub fn ty(&self) -> &TensorType {
        &self.ty
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn blocks(&self) -> &[Tensor] {
        &self.blocks
    }

    pub fn block(&self, order: usize) -> Option<&Tensor> {
        self.ty
            .terms()
            .iter()
            .position(|t| t.order == order)
            .map(|i| &self.blocks[i])
    }

    /// The samples at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> FeatureBatch {
        let blocks = self
            .ty
            .terms()
            .iter()
            .zip(&self.blocks)
            .map(|(t, b)| {
                let k = self.d.pow(t.order as u32);
                let cols = self.batch * k;
                let mut data = Vec::with_capacity(t.multiplicity * idx.len() * k);
                for c in 0..t.multiplicity {
                    for &s in idx {
                        data.extend_from_slice(&b.data()[c * cols + s * k..c * cols + (s + 1) * k]);
                    }
                }
                Tensor::matrix(t.multiplicity, idx.len() * k, data).expect("sized above")
            })
            .collect();
        FeatureBatch {
            ty: self.ty.clone(),
            d: self.d,
            batch: idx.len(),
            blocks,
        }
    }

    /// Applies `ρ(g)^{⊗m}` to every channel of every sample.
    pub fn transform(&self, g: &GroupElement) -> FeatureBatch {
        let blocks = self
            .ty
            .terms()
            .iter()
            .zip(&self.blocks)
            .map(|(t, b)| {
                let k = self.d.pow(t.order as u32);
                let data: Vec<f64> = b
                    .data()
                    .chunks(k)
                    .flat_map(|v| apply_power(g.matrix(), t.order, v))
                    .collect();
                Tensor::new(b.shape().to_vec(), data).expect("shape preserved")
            })
            .collect();
        FeatureBatch {
            ty: self.ty.clone(),
            d: self.d,
            batch: self.batch,
            blocks,
        }
    }

    /// All blocks concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.data().iter().copied()).collect()
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_channel_major_layout() {
        let ty: TensorType = "2T0+T1".parse().unwrap();
        let a = TypedFeature::from_flat(ty.clone(), 3, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = TypedFeature::from_flat(ty, 3, &[6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let fb = FeatureBatch::from_features(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(fb.blocks()[0].data(), &[1.0, 6.0, 2.0, 7.0]);
        assert_eq!(fb.blocks()[1].data(), &[3.0, 4.0, 5.0, 8.0, 9.0, 10.0]);
        assert_eq!(fb.to_features().unwrap(), vec![a, b.clone()]);
        assert_eq!(fb.select(&[1]).to_features().unwrap(), vec![b]);
    }
}
