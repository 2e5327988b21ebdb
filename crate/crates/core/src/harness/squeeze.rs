//! Squeeze phase: one forward pass of the real training set through the fixed
//! net, per-layer real statistics, and a ridge head on the final features.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, UniddError};
use crate::features::{
    build_net, corr_stats, read_row_major, spatial_average, write_row_major, CorrStats, FeatureNet,
    NetConfig,
};
use crate::harness::dataset::Dataset;
use crate::linalg::{frob, Mat};
use crate::objectives::{krr_ridge_solution, ridge_gradient, LinearModel};

const MAGIC: &[u8; 4] = b"UDSQ";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeArtifact {
    pub net: FeatureNet,
    pub head: LinearModel,
    pub real_stats: Vec<CorrStats>,
    pub ridge_beta: f64,
    /// Hex SHA-256 over the net config, ridge parameter and training data.
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    ridge_beta: f64,
    config_hash: String,
    layers: usize,
}

/// Spatially averaged final-layer features of `inputs`.
pub fn head_features(net: &FeatureNet, inputs: &Mat) -> Result<Mat> {
    let maps = net.forward(inputs)?;
    Ok(spatial_average(maps.last().expect("net has at least one layer")))
}

pub fn squeeze_hash(net: &NetConfig, ridge_beta: f64, train: &Dataset) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(net).expect("net config serializes"));
    hasher.update(ridge_beta.to_le_bytes());
    hasher.update(train.to_bytes());
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the net, collects the real per-layer statistics on the full training
/// split and fits the ridge head on the final-layer features.
pub fn squeeze(train: &Dataset, net_config: &NetConfig, ridge_beta: f64) -> Result<SqueezeArtifact> {
    if train.len() < 2 {
        return Err(UniddError::InvalidConfig("squeeze needs a non-trivial training split".into()));
    }
    let net = build_net(net_config)?;
    let maps = net.forward(&train.h)?;
    let real_stats = maps
        .iter()
        .map(|m| corr_stats(m, &train.y))
        .collect::<Result<Vec<_>>>()?;
    let features = spatial_average(maps.last().expect("net has at least one layer"));
    let head = krr_ridge_solution(&features, &train.y, ridge_beta)?;
    Ok(SqueezeArtifact {
        net,
        head,
        real_stats,
        ridge_beta,
        config_hash: squeeze_hash(net_config, ridge_beta, train),
    })
}

impl SqueezeArtifact {
    /// Norm of the ridge-objective gradient of the head on `train`, relative to `‖XᵀY‖`.
    pub fn head_stationarity(&self, train: &Dataset) -> Result<f64> {
        let features = head_features(&self.net, &train.h)?;
        let g = ridge_gradient(&features, &train.y, &self.head, self.ridge_beta)?;
        Ok(frob(&g) / frob(&(features.transpose() * &train.y)).max(1.0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            net: self.net.config().clone(),
            ridge_beta: self.ridge_beta,
            config_hash: self.config_hash.clone(),
            layers: self.real_stats.len(),
        })
        .expect("header serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        let w = &self.head.weights;
        buf.extend_from_slice(&(w.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(w.ncols() as u32).to_le_bytes());
        write_row_major(&mut buf, w).expect("writing to a Vec cannot fail");
        for stats in &self.real_stats {
            stats.write_to(&mut buf).expect("writing to a Vec cannot fail");
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(UniddError::Format("not a squeeze artifact".into()));
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(UniddError::ChecksumMismatch { stored, computed });
        }
        let mut r = &bytes[4..body_end];
        let version = crate::features::read_u32(&mut r)?;
        if version != VERSION {
            return Err(UniddError::Format(format!("unsupported squeeze version {version}")));
        }
        let len = crate::features::read_u32(&mut r)? as usize;
        if r.len() < len {
            return Err(UniddError::Format("truncated squeeze header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len])
            .map_err(|e| UniddError::Format(format!("squeeze header: {e}")))?;
        r = &r[len..];
        let rows = crate::features::read_u32(&mut r)? as usize;
        let cols = crate::features::read_u32(&mut r)? as usize;
        let head = LinearModel::new(read_row_major(&mut r, rows, cols)?)?;
        let real_stats = (0..header.layers)
            .map(|_| CorrStats::read_from(&mut r))
            .collect::<Result<Vec<_>>>()?;
        if !r.is_empty() {
            return Err(UniddError::Format("trailing bytes in squeeze artifact".into()));
        }
        let net = build_net(&header.net)?;
        if net.depth() != real_stats.len() {
            return Err(UniddError::Format("layer count does not match the net".into()));
        }
        if head.weights.nrows() != net.feature_dim() {
            return Err(UniddError::Format("head width does not match the net".into()));
        }
        Ok(SqueezeArtifact {
            net,
            head,
            real_stats,
            ridge_beta: header.ridge_beta,
            config_hash: header.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::{generate_gaussian_mixture, MixtureConfig};

    fn data() -> Dataset {
        generate_gaussian_mixture(&MixtureConfig {
            classes: 3,
            input_dim: 6,
            per_class: 40,
            separation: 5.0,
            seed: 2,
        })
        .unwrap()
        .0
    }

    #[test]
    fn squeeze_is_deterministic_and_consistent() {
        let train = data();
        let cfg = NetConfig::flat(&[6, 8, 5], 3);
        let a = squeeze(&train, &cfg, 0.5).unwrap();
        let b = squeeze(&train, &cfg, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.real_stats.len(), 2);
        let maps = a.net.forward(&train.h).unwrap();
        assert_eq!(a.real_stats[0], corr_stats(&maps[0], &train.y).unwrap());
        assert!(a.head_stationarity(&train).unwrap() < 1e-8);
    }

    #[test]
    fn artifact_round_trip_and_corruption() {
        let train = data();
        let art = squeeze(&train, &NetConfig::flat(&[6, 4], 1), 1.0).unwrap();
        let bytes = art.to_bytes();
        assert_eq!(SqueezeArtifact::from_bytes(&bytes).unwrap(), art);
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert!(SqueezeArtifact::from_bytes(&bad).is_err());
        assert!(SqueezeArtifact::from_bytes(&bytes[..12]).is_err());
    }

    #[test]
    fn hash_tracks_inputs() {
        let train = data();
        let a = squeeze_hash(&NetConfig::flat(&[6, 4], 1), 1.0, &train);
        assert_eq!(a, squeeze_hash(&NetConfig::flat(&[6, 4], 1), 1.0, &train));
        assert_ne!(a, squeeze_hash(&NetConfig::flat(&[6, 4], 2), 1.0, &train));
        assert_ne!(a, squeeze_hash(&NetConfig::flat(&[6, 4], 1), 0.5, &train));
        assert_eq!(a.len(), 64);
    }
}
