//! Grouping of countries by mortality dynamics: feature extraction, K-means
//! and elbow selection of the number of clusters.

pub mod features;
pub mod kmeans;
pub mod stl;

pub use features::{build_features, lc_kappas, ClusterFeatures, FeatureMethod};
pub use kmeans::{elbow_select, inertia_curve, kmeans, ClusterResult, KMeansConfig};
pub use stl::{seasonal_strength, stl, trend_slope, StlConfig, StlDecomposition};

use crate::data::MortalityTensor;
use crate::error::Result;

/// Options for clustering countries.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringConfig {
    pub method: FeatureMethod,
    /// Fixed number of clusters; the elbow rule is used when `None`.
    pub k: Option<usize>,
    /// Largest `K` on the elbow curve.
    pub k_max: usize,
    pub kmeans: KMeansConfig,
    pub stl: StlConfig,
}

impl ClusteringConfig {
    pub fn new(method: FeatureMethod) -> Self {
        Self {
            method,
            k: None,
            k_max: 10,
            kmeans: KMeansConfig::default(),
            stl: StlConfig::default(),
        }
    }
}

/// Features and cluster assignment for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub countries: Vec<String>,
    pub features: ClusterFeatures,
    pub result: ClusterResult,
}

impl Clustering {
    /// Country indices of each cluster, ordered by cluster id.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        self.result.members()
    }
}

/// Clusters the countries of `tensor` using κ from single-population
/// Lee–Carter fits on the tensor's current scale.
pub fn cluster_countries(tensor: &MortalityTensor, cfg: &ClusteringConfig) -> Result<Clustering> {
    let kappas = lc_kappas(tensor)?;
    cluster_kappas(tensor.countries(), &kappas, cfg)
}

/// Clusters countries from precomputed κ series.
pub fn cluster_kappas(
    countries: &[String],
    kappas: &[Vec<f64>],
    cfg: &ClusteringConfig,
) -> Result<Clustering> {
    let features = build_features(kappas, cfg.method, &cfg.stl)?;
    let n = countries.len();
    let k_max = cfg.k_max.min(n);
    let (k, curve) = match cfg.k {
        Some(k) => {
            let curve = if k_max >= 1 {
                inertia_curve(&features.matrix, countries, k_max, &cfg.kmeans)?
            } else {
                Vec::new()
            };
            (k, curve)
        }
        None => {
            let curve = inertia_curve(&features.matrix, countries, k_max, &cfg.kmeans)?;
            (elbow_select(&curve)?, curve)
        }
    };
    let mut result = kmeans(&features.matrix, countries, k, &cfg.kmeans)?;
    result.k_curve = curve;
    log::info!(
        "method {}: K = {k}, inertia = {:.6e}",
        cfg.method.number(),
        result.inertia
    );
    Ok(Clustering {
        countries: countries.to_vec(),
        features,
        result,
    })
}
