//! Layered one-dimensional phantoms and piecewise composition of per-layer
//! Bortfeld parameters.
//!
//! Inside layer `i` the dose is the Bortfeld curve of `(R_i, σ_i, ε_i)` at the
//! global depth `x`. Layer boundaries are fixed and known; densities are carried
//! for reporting and prior construction only.

use serde::{Deserialize, Serialize};

use crate::bortfeld::{DoseCurve, EmissionGrid, FixedPhysics, Segment, TissueParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub x_start: f64,
    pub x_end: f64,
    /// g/cm³
    pub density: f64,
    #[serde(default)]
    pub label: String,
}

/// Contiguous layers starting at depth zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Layer>", into = "Vec<Layer>")]
pub struct Phantom {
    layers: Vec<Layer>,
}

impl TryFrom<Vec<Layer>> for Phantom {
    type Error = Error;

    fn try_from(layers: Vec<Layer>) -> Result<Self> {
        Phantom::new(layers)
    }
}

impl From<Phantom> for Vec<Layer> {
    fn from(p: Phantom) -> Self {
        p.layers
    }
}

const LUNG_BOUNDARIES: [f64; 12] = [0.0, 0.3, 1.8, 3.3, 4.0, 10.0, 13.0, 16.0, 16.7, 18.2, 19.7, 20.0];
const LUNG_DENSITIES: [f64; 11] = [1.09, 0.92, 1.04, 1.85, 0.3, 1.0, 0.3, 1.85, 1.04, 0.92, 1.09];
const LUNG_LABELS: [&str; 11] = [
    "skin", "adipose", "muscle", "bone", "lung", "tumour", "lung", "bone", "muscle", "adipose", "skin",
];

impl Phantom {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidGeometry("phantom has no layers".into()));
        }
        if layers[0].x_start != 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "first layer must start at depth 0, starts at {}",
                layers[0].x_start
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if !(l.x_start < l.x_end) || !l.x_end.is_finite() {
                return Err(Error::InvalidGeometry(format!(
                    "layer {i} has empty or inverted extent [{}, {}]",
                    l.x_start, l.x_end
                )));
            }
            if !(l.density > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "layer {i} density must be positive, got {}",
                    l.density
                )));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].x_end != w[1].x_start {
                let what = if w[1].x_start < w[0].x_end {
                    "overlaps"
                } else {
                    "leaves a gap to"
                };
                return Err(Error::InvalidGeometry(format!(
                    "layer {i} (ends {}) {what} layer {} (starts {})",
                    w[0].x_end,
                    i + 1,
                    w[1].x_start
                )));
            }
        }
        Ok(Phantom { layers })
    }

    /// A single layer of uniform material on `[0, depth]`.
    pub fn homogeneous(depth: f64, density: f64, label: &str) -> Result<Self> {
        Phantom::new(vec![Layer {
            x_start: 0.0,
            x_end: depth,
            density,
            label: label.to_string(),
        }])
    }

    /// The eleven-layer lung cross section: skin, adipose, muscle, bone, lung,
    /// tumour on [10, 13] cm, then the mirrored sequence out to 20 cm.
    pub fn lung() -> Self {
        let layers = (0..11)
            .map(|i| Layer {
                x_start: LUNG_BOUNDARIES[i],
                x_end: LUNG_BOUNDARIES[i + 1],
                density: LUNG_DENSITIES[i],
                label: LUNG_LABELS[i].to_string(),
            })
            .collect();
        Phantom::new(layers).expect("lung phantom is valid")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn extent(&self) -> (f64, f64) {
        (0.0, self.layers[self.layers.len() - 1].x_end)
    }

    /// Index of the layer containing `x`. Layers are half-open `[start, end)`
    /// except the last, which includes its end.
    pub fn layer_index(&self, x: f64) -> Result<usize> {
        let (lo, hi) = self.extent();
        if !(x >= lo && x <= hi) {
            return Err(Error::Domain(format!(
                "depth {x} outside the phantom extent [{lo}, {hi}]"
            )));
        }
        let idx = self.layers.partition_point(|l| l.x_end <= x);
        Ok(idx.min(self.layers.len() - 1))
    }
}

/// One parameter triple per phantom layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayeredParams {
    pub per_layer: Vec<TissueParams>,
}

impl LayeredParams {
    pub fn new(per_layer: Vec<TissueParams>) -> Result<Self> {
        for p in &per_layer {
            p.validate()?;
        }
        Ok(LayeredParams { per_layer })
    }

    pub fn uniform(params: TissueParams, layers: usize) -> Self {
        LayeredParams {
            per_layer: vec![params; layers],
        }
    }

    pub fn len(&self) -> usize {
        self.per_layer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.is_empty()
    }

    /// Flattened as `[R_1..R_n, σ_1..σ_n, ε_1..ε_n]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.len());
        v.extend(self.per_layer.iter().map(|p| p.range));
        v.extend(self.per_layer.iter().map(|p| p.sigma));
        v.extend(self.per_layer.iter().map(|p| p.epsilon));
        v
    }

    /// Inverse of [`to_vector`](Self::to_vector); validates every triple.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.is_empty() || !v.len().is_multiple_of(3) {
            return Err(Error::InvalidParams(format!(
                "parameter vector length {} is not a positive multiple of 3",
                v.len()
            )));
        }
        let n = v.len() / 3;
        let per_layer = (0..n)
            .map(|i| TissueParams::new(v[i], v[n + i], v[2 * n + i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayeredParams { per_layer })
    }

    fn check_against(&self, phantom: &Phantom) -> Result<()> {
        if self.len() != phantom.len() {
            return Err(Error::InvalidParams(format!(
                "{} parameter triples for a {}-layer phantom",
                self.len(),
                phantom.len()
            )));
        }
        Ok(())
    }
}

/// A phantom together with the fixed physics constants: everything the
/// forward model needs besides the unknown parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub phantom: Phantom,
    #[serde(default)]
    pub physics: FixedPhysics,
}

impl Medium {
    pub fn new(phantom: Phantom, physics: FixedPhysics) -> Result<Self> {
        physics.validate()?;
        Ok(Medium { phantom, physics })
    }

    pub fn curves(&self, params: &LayeredParams) -> Result<Vec<DoseCurve>> {
        params.check_against(&self.phantom)?;
        params
            .per_layer
            .iter()
            .map(|p| DoseCurve::new(p, &self.physics))
            .collect()
    }

    /// Emission quadrature over the whole phantom with panel breaks at every
    /// layer interface.
    pub fn emission_grid(&self, params: &LayeredParams, max_panel: f64) -> Result<EmissionGrid> {
        let curves = self.curves(params)?;
        let segments: Vec<Segment<'_>> = self
            .phantom
            .layers()
            .iter()
            .zip(&curves)
            .map(|(l, c)| Segment {
                start: l.x_start,
                end: l.x_end,
                curve: c,
            })
            .collect();
        EmissionGrid::from_segments(&segments, max_panel)
    }
}

/// Piecewise dose: the Bortfeld curve of the layer containing `x`.
pub fn layered_dose(
    x: f64,
    phantom: &Phantom,
    params: &LayeredParams,
    physics: &FixedPhysics,
) -> Result<f64> {
    params.check_against(phantom)?;
    let i = phantom.layer_index(x)?;
    DoseCurve::new(&params.per_layer[i], physics)?.eval(x)
}

/// Emission density normalized over the phantom extent.
pub fn layered_emission_density(
    x: f64,
    phantom: &Phantom,
    params: &LayeredParams,
    physics: &FixedPhysics,
) -> Result<f64> {
    let medium = Medium::new(phantom.clone(), *physics)?;
    let grid = medium.emission_grid(params, crate::bortfeld::DEFAULT_MAX_PANEL)?;
    Ok(layered_dose(x, phantom, params, physics)? / grid.dose_integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bortfeld::dose;
    use crate::quadrature::{integrate, Tolerance};

    fn triple() -> TissueParams {
        TissueParams::new(11.8, 0.3, 0.25).unwrap()
    }

    #[test]
    fn lung_geometry() {
        let p = Phantom::lung();
        assert_eq!(p.len(), 11);
        assert_eq!(p.extent(), (0.0, 20.0));
        assert_eq!(p.layers()[5].label, "tumour");
        assert_eq!(p.layers()[5].x_start, 10.0);
        assert_eq!(p.layers()[5].x_end, 13.0);
        assert_eq!(p.layers()[4].density, 0.3);
        assert_eq!(p.layer_index(10.0).unwrap(), 5);
        assert_eq!(p.layer_index(9.999).unwrap(), 4);
        assert_eq!(p.layer_index(20.0).unwrap(), 10);
        assert!(p.layer_index(20.01).is_err());
    }

    #[test]
    fn rejects_gaps_and_overlaps() {
        let mk = |a: f64, b: f64, c: f64, d: f64| {
            Phantom::new(vec![
                Layer {
                    x_start: a,
                    x_end: b,
                    density: 1.0,
                    label: String::new(),
                },
                Layer {
                    x_start: c,
                    x_end: d,
                    density: 1.0,
                    label: String::new(),
                },
            ])
        };
        assert!(mk(0.0, 1.0, 1.0, 2.0).is_ok());
        assert!(mk(0.0, 1.0, 1.5, 2.0).is_err());
        assert!(mk(0.0, 1.0, 0.5, 2.0).is_err());
        assert!(mk(0.1, 1.0, 1.0, 2.0).is_err());
        assert!(Phantom::new(vec![]).is_err());
        assert!(Phantom::homogeneous(10.0, -1.0, "x").is_err());
    }

    #[test]
    fn single_layer_matches_bortfeld() {
        let ph = FixedPhysics::default();
        let phantom = Phantom::homogeneous(22.0, 1.0, "water").unwrap();
        let params = LayeredParams::uniform(triple(), 1);
        for x in [0.0, 3.0, 11.5, 11.8, 12.4, 22.0] {
            assert_eq!(
                layered_dose(x, &phantom, &params, &ph).unwrap(),
                dose(x, &triple(), &ph).unwrap()
            );
        }
    }

    #[test]
    fn identical_split_layers_match_single_layer() {
        let ph = FixedPhysics::default();
        let one = Phantom::homogeneous(20.0, 1.0, "water").unwrap();
        let two = Phantom::new(vec![
            Layer {
                x_start: 0.0,
                x_end: 11.0,
                density: 1.0,
                label: "a".into(),
            },
            Layer {
                x_start: 11.0,
                x_end: 20.0,
                density: 1.0,
                label: "b".into(),
            },
        ])
        .unwrap();
        let p1 = LayeredParams::uniform(triple(), 1);
        let p2 = LayeredParams::uniform(triple(), 2);
        for i in 0..=200 {
            let x = 0.1 * i as f64;
            let a = layered_emission_density(x, &one, &p1, &ph).unwrap();
            let b = layered_emission_density(x, &two, &p2, &ph).unwrap();
            assert!((a - b).abs() <= 1e-7 * a.max(1e-12), "x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn shared_params_continuous_across_lung_interfaces() {
        let ph = FixedPhysics::default();
        let lung = Phantom::lung();
        let params = LayeredParams::uniform(triple(), 11);
        for l in &lung.layers()[1..] {
            let x = l.x_start;
            let left = layered_dose(x - 1e-9, &lung, &params, &ph).unwrap();
            let right = layered_dose(x, &lung, &params, &ph).unwrap();
            assert!((left - right).abs() <= 1e-6 * left.max(right).max(1e-300));
        }
    }

    #[test]
    fn lung_density_normalized() {
        let ph = FixedPhysics::default();
        let lung = Phantom::lung();
        let params = LayeredParams::uniform(triple(), 11);
        let medium = Medium::new(lung.clone(), ph).unwrap();
        let grid = medium.emission_grid(&params, 0.5).unwrap();
        let mut pts: Vec<f64> = LUNG_BOUNDARIES.to_vec();
        pts.push(11.8);
        pts.sort_by(f64::total_cmp);
        let total = integrate(
            |x| layered_dose(x, &lung, &params, &ph).unwrap(),
            &pts,
            Tolerance::relative(1e-11),
        )
        .unwrap();
        assert!((total.value / grid.dose_integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn changing_one_layer_is_local() {
        let ph = FixedPhysics::default();
        let lung = Phantom::lung();
        let base = LayeredParams::uniform(triple(), 11);
        let mut changed = base.clone();
        changed.per_layer[4] = TissueParams::new(9.0, 0.4, 0.1).unwrap();
        for i in 0..=400 {
            let x = 0.05 * i as f64;
            let a = layered_dose(x, &lung, &base, &ph).unwrap();
            let b = layered_dose(x, &lung, &changed, &ph).unwrap();
            if lung.layer_index(x).unwrap() != 4 {
                assert_eq!(a, b, "x={x}");
            }
        }
    }

    #[test]
    fn vector_round_trip_and_validation() {
        let p = LayeredParams::new(vec![
            TissueParams::new(1.0, 0.1, 0.2).unwrap(),
            TissueParams::new(2.0, 0.3, 0.4).unwrap(),
        ])
        .unwrap();
        let v = p.to_vector();
        assert_eq!(v, vec![1.0, 2.0, 0.1, 0.3, 0.2, 0.4]);
        assert_eq!(LayeredParams::from_vector(&v).unwrap(), p);
        assert!(LayeredParams::from_vector(&[1.0, 0.1]).is_err());
        assert!(LayeredParams::from_vector(&[1.0, -0.1, 0.2]).is_err());
    }

    #[test]
    fn mismatched_layer_count_is_error() {
        let ph = FixedPhysics::default();
        let params = LayeredParams::uniform(triple(), 2);
        assert!(layered_dose(1.0, &Phantom::lung(), &params, &ph).is_err());
    }
}
