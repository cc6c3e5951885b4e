//! Model container.
//!
//! ```text
//! "MGD1" | u32 version | u32 manifest_len | manifest JSON
//! u32 tree_count | per tree: u32 node_count | nodes
//!   node: u32 feature | f64 threshold | u32 left | u32 right | f64 value   (28 bytes)
//! sha256 of all preceding bytes
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DecoderError, GbdtModel, GbdtParams, Node, Normalizer, Tree};
use crate::conformal::RapsCalibration;
use crate::kinematics::Catalog;

pub const MODEL_MAGIC: &[u8; 4] = b"MGD1";
pub const MODEL_FORMAT_VERSION: u32 = 1;

const NODE_LEN: usize = 28;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    params: GbdtParams,
    n_features: usize,
    classes: Vec<String>,
    normalizer: Normalizer,
    catalog_hash: String,
    calibration: Option<RapsCalibration>,
}

/// Everything needed to run a trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: GbdtModel,
    pub normalizer: Normalizer,
    /// Class names by index.
    pub classes: Vec<String>,
    /// Content hash of the catalog the model was trained against.
    pub catalog_hash: String,
    pub calibration: Option<RapsCalibration>,
}

impl SavedModel {
    /// Fails with `CatalogMismatch` when `catalog` differs from the training catalog.
    pub fn check_catalog(&self, catalog: &Catalog) -> Result<(), DecoderError> {
        let current = catalog.content_hash();
        if current == self.catalog_hash {
            Ok(())
        } else {
            Err(DecoderError::CatalogMismatch {
                saved: self.catalog_hash.clone(),
                current,
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            params: self.model.params.clone(),
            n_features: self.model.n_features,
            classes: self.classes.clone(),
            normalizer: self.normalizer.clone(),
            catalog_hash: self.catalog_hash.clone(),
            calibration: self.calibration.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.model.trees.len() as u32).to_le_bytes());
        for tree in &self.model.trees {
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for n in &tree.nodes {
                out.extend_from_slice(&n.feature.to_le_bytes());
                out.extend_from_slice(&n.threshold.to_le_bytes());
                out.extend_from_slice(&n.left.to_le_bytes());
                out.extend_from_slice(&n.right.to_le_bytes());
                out.extend_from_slice(&n.value.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecoderError> {
        let corrupt = |m: &str| DecoderError::CorruptFile(m.to_owned());
        if bytes.len() < 12 + DIGEST_LEN || &bytes[..4] != MODEL_MAGIC {
            return Err(corrupt("missing model header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != MODEL_FORMAT_VERSION {
            return Err(DecoderError::VersionMismatch {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }

        let mut r = Reader { buf: body, pos: 8 };
        let json_len = r.u32()? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| DecoderError::CorruptFile(format!("manifest: {e}")))?;
        let n_classes = manifest.classes.len();
        let tree_count = r.u32()? as usize;
        if n_classes < 2 || tree_count % n_classes != 0 {
            return Err(corrupt("tree count does not match class count"));
        }
        let mut trees = Vec::with_capacity(tree_count);
        for _ in 0..tree_count {
            let count = r.u32()? as usize;
            if count == 0 || count > (body.len() - r.pos) / NODE_LEN {
                return Err(corrupt("bad node count"));
            }
            let mut nodes = Vec::with_capacity(count);
            for _ in 0..count {
                nodes.push(Node {
                    feature: r.u32()?,
                    threshold: r.f64()?,
                    left: r.u32()?,
                    right: r.u32()?,
                    value: r.f64()?,
                });
            }
            let tree = Tree { nodes };
            if !tree.is_well_formed()
                || tree
                    .nodes
                    .iter()
                    .any(|n| !n.is_leaf() && n.feature as usize >= manifest.n_features)
            {
                return Err(corrupt("malformed tree"));
            }
            trees.push(tree);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        if manifest.normalizer.n_features() != manifest.n_features {
            return Err(corrupt("normalizer width does not match features"));
        }
        Ok(Self {
            model: GbdtModel {
                n_features: manifest.n_features,
                n_classes,
                params: manifest.params,
                trees,
            },
            normalizer: manifest.normalizer,
            classes: manifest.classes,
            catalog_hash: manifest.catalog_hash,
            calibration: manifest.calibration,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecoderError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DecoderError::CorruptFile("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DecoderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, DecoderError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_model(path: &Path, saved: &SavedModel) -> Result<(), DecoderError> {
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&saved.to_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel, DecoderError> {
    SavedModel::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::Classifier;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained() -> SavedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 300;
        let x: Vec<f64> = (0..n * 4).map(|_| rng.random::<f64>()).collect();
        let y: Vec<usize> = x.chunks_exact(4).map(|r| usize::from(r[0] + r[2] > 1.0) + usize::from(r[1] > 0.7)).collect();
        let params = GbdtParams {
            n_rounds: 20,
            ..Default::default()
        };
        let (model, _) = GbdtModel::fit(&x, 4, &y, 3, &params).unwrap();
        SavedModel {
            model,
            normalizer: Normalizer::fit_rows(&x, 4).unwrap(),
            classes: vec!["rest".into(), "thumb".into(), "index".into()],
            catalog_hash: Catalog::standard().content_hash(),
            calibration: Some(RapsCalibration::new(0.1, 0.01, 1, 0.93).unwrap()),
        }
    }

    #[test]
    fn round_trip_gives_identical_predictions() {
        let saved = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mgd");
        save_model(&path, &saved).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, saved);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let q: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
            let a = saved.model.predict_proba(&q).unwrap();
            let b = loaded.model.predict_proba(&q).unwrap();
            assert_eq!(a.probs, b.probs);
        }
    }

    #[test]
    fn truncation_and_bit_flips_are_corrupt() {
        let bytes = trained().to_bytes();
        for cut in [0, 3, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                SavedModel::from_bytes(&bytes[..cut]),
                Err(DecoderError::CorruptFile(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 0x10;
        assert!(matches!(
            SavedModel::from_bytes(&flipped),
            Err(DecoderError::CorruptFile(_))
        ));
    }

    #[test]
    fn version_bump_is_rejected() {
        let mut bytes = trained().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            SavedModel::from_bytes(&bytes),
            Err(DecoderError::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn catalog_change_is_detected() {
        let saved = trained();
        let mut catalog = Catalog::standard();
        saved.check_catalog(&catalog).unwrap();
        catalog.remap_display("pinch2", "grasp").unwrap();
        assert!(matches!(
            saved.check_catalog(&catalog),
            Err(DecoderError::CatalogMismatch { .. })
        ));
    }

    #[test]
    fn same_training_gives_same_bytes() {
        assert_eq!(
            Sha256::digest(trained().to_bytes()),
            Sha256::digest(trained().to_bytes())
        );
    }
}
