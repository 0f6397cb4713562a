//! Image ingestion and feature preparation.
//!
//! IDX files are parsed directly. Images are cut into a grid of patches, each
//! patch position gets its own PCA fitted on the training split, and projected
//! features are min-max scaled to `[0, pi]` with training-split bounds.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadFeatures;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Grayscale images with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols * labels.len() {
            return Err(Error::Data(format!(
                "{} pixels do not form {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(ImageSet {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }

    /// Images at `indices`, with labels replaced by `relabel`.
    fn select(&self, indices: &[usize], relabel: impl Fn(u8) -> u8) -> ImageSet {
        let mut pixels = Vec::with_capacity(indices.len() * self.rows * self.cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(relabel(self.labels[i]));
        }
        ImageSet {
            rows: self.rows,
            cols: self.cols,
            pixels,
            labels,
        }
    }
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl IdxReader<'_> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        let b = self
            .bytes
            .get(offset..offset + 4)
            .ok_or_else(|| self.err(offset, format!("header truncated, file has {} bytes", self.bytes.len())))?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Checks the magic and returns the dimension sizes and payload offset.
    fn header(&self, magic: u32) -> Result<(Vec<usize>, usize)> {
        let found = self.u32_at(0)?;
        if found != magic {
            return Err(self.err(0, format!("magic 0x{found:08x}, expected 0x{magic:08x}")));
        }
        let n_dims = (magic & 0xff) as usize;
        let dims = (0..n_dims)
            .map(|d| self.u32_at(4 + 4 * d).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let start = 4 + 4 * n_dims;
        let expected: usize = dims.iter().product();
        let actual = self.bytes.len() - start;
        if actual < expected {
            return Err(self.err(
                start + actual,
                format!("payload truncated: expected {expected} bytes, found {actual}"),
            ));
        }
        Ok((dims, start))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file (`0x00000803`) and label file (`0x00000801`).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageSet> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_file(ip)?;
    let label_bytes = read_file(lp)?;

    let images = IdxReader {
        path: ip,
        bytes: &image_bytes,
    };
    let (dims, start) = images.header(IMAGE_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = image_bytes[start..start + count * rows * cols].to_vec();

    let labels = IdxReader {
        path: lp,
        bytes: &label_bytes,
    };
    let (ldims, lstart) = labels.header(LABEL_MAGIC)?;
    if ldims[0] != count {
        return Err(labels.err(4, format!("{} labels for {count} images", ldims[0])));
    }
    let labels = label_bytes[lstart..lstart + count].to_vec();
    ImageSet::new(rows, cols, pixels, labels)
}

/// Standard file names inside a dataset directory.
pub fn dataset_files(dir: &Path) -> [(PathBuf, PathBuf); 2] {
    [
        (dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte")),
        (dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte")),
    ]
}

/// Loads the train and test partitions from a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(ImageSet, ImageSet)> {
    let [(ti, tl), (ei, el)] = dataset_files(dir);
    Ok((load_idx(ti, tl)?, load_idx(ei, el)?))
}

fn pick(set: &ImageSet, classes: &[u8], per_class: usize, rng: &mut ChaCha8Rng, split: &str) -> Result<ImageSet> {
    let mut chosen = Vec::with_capacity(per_class * classes.len());
    for &c in classes {
        let mut idx: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == c).collect();
        if idx.len() < per_class {
            return Err(Error::Data(format!(
                "{split} split has {} samples of class {c}, {per_class} requested",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        idx.truncate(per_class);
        chosen.extend(idx);
    }
    chosen.sort_unstable();
    let position = |l: u8| classes.iter().position(|&c| c == l).expect("filtered") as u8;
    Ok(set.select(&chosen, position))
}

/// Seeded class-balanced draw from each partition. Labels in the result are
/// positions in `classes`.
pub fn subsample(
    train: &ImageSet,
    test: &ImageSet,
    classes: &[u8],
    per_class_train: usize,
    per_class_test: usize,
    seed: u64,
) -> Result<(ImageSet, ImageSet)> {
    let mut seen = classes.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != classes.len() || classes.is_empty() {
        return Err(Error::config("classes", "must be a nonempty list of distinct labels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = pick(train, classes, per_class_train, &mut rng, "train")?;
    let b = pick(test, classes, per_class_test, &mut rng, "test")?;
    Ok((a, b))
}

/// Cuts an image into a `grid` of equal patches, row-major, each flattened
/// row-major and scaled by `1/255`.
pub fn patchify(image: &[u8], rows: usize, cols: usize, grid: (usize, usize)) -> Result<Vec<Vec<f64>>> {
    let (gr, gc) = grid;
    if gr == 0 || gc == 0 || !rows.is_multiple_of(gr) || !cols.is_multiple_of(gc) {
        return Err(Error::config(
            "patch_grid",
            format!("{gr}x{gc} does not divide a {rows}x{cols} image"),
        ));
    }
    if image.len() != rows * cols {
        return Err(Error::Shape(format!("image of {} pixels, expected {}", image.len(), rows * cols)));
    }
    let (ph, pw) = (rows / gr, cols / gc);
    let mut patches = Vec::with_capacity(gr * gc);
    for br in 0..gr {
        for bc in 0..gc {
            let mut p = Vec::with_capacity(ph * pw);
            for r in 0..ph {
                let row = (br * ph + r) * cols + bc * pw;
                p.extend(image[row..row + pw].iter().map(|&v| f64::from(v) / 255.0));
            }
            patches.push(p);
        }
    }
    Ok(patches)
}

/// What to do when a patch position has fewer informative directions than
/// requested features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    #[default]
    Error,
    /// Keep the zero-variance directions; they map to constant features.
    Allow,
}

/// PCA for one patch position, with the training range of each feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaPosition {
    pub mean: Vec<f64>,
    /// `n_features` rows of length `patch_dim`, orthonormal.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl PcaPosition {
    pub fn project(&self, patch: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(patch).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
            .collect()
    }

    /// Projection rescaled to `[0, pi]`, clamped.
    pub fn features(&self, patch: &[f64]) -> Vec<f64> {
        self.project(patch)
            .into_iter()
            .enumerate()
            .map(|(f, y)| {
                let span = self.max[f] - self.min[f];
                if span <= 1e-12 {
                    0.0
                } else {
                    ((y - self.min[f]) / span * PI).clamp(0.0, PI)
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub positions: Vec<PcaPosition>,
    pub fitted: bool,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.positions.first().map_or(0, |p| p.components.len())
    }

    /// Scaled features for every patch of one image.
    pub fn prepare(&self, patches: &[Vec<f64>]) -> Result<HeadFeatures> {
        if !self.fitted {
            return Err(Error::State("PCA model has not been fitted".into()));
        }
        if patches.len() != self.positions.len() {
            return Err(Error::Shape(format!(
                "{} patches for {} fitted positions",
                patches.len(),
                self.positions.len()
            )));
        }
        Ok(self.positions.iter().zip(patches).map(|(p, x)| p.features(x)).collect())
    }
}

fn fit_position(samples: &[Vec<f64>], n_features: usize, policy: RankPolicy, position: usize) -> Result<PcaPosition> {
    let n = samples.len();
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape(format!("position {position}: ragged patch vectors")));
    }
    if n_features > dim {
        return Err(Error::Data(format!(
            "position {position}: {n_features} features requested from {dim}-dimensional patches"
        )));
    }
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centred = DMatrix::from_fn(n, dim, |i, j| samples[i][j] - mean[j]);
    let cov = (centred.transpose() * &centred) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOLERANCE * top && eig.eigenvalues[i] > 0.0)
        .count();
    if rank < n_features && policy == RankPolicy::Error {
        return Err(Error::Data(format!(
            "patch position {position} has rank {rank} < {n_features} features; use fewer qubits"
        )));
    }

    let mut components = Vec::with_capacity(n_features);
    let mut eigenvalues = Vec::with_capacity(n_features);
    for &i in order.iter().take(n_features) {
        let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = c
            .iter()
            .enumerate()
            .fold(0, |best, (k, v)| if v.abs() > c[best].abs() { k } else { best });
        if c[lead] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        eigenvalues.push(eig.eigenvalues[i].max(0.0));
    }

    let mut pos = PcaPosition {
        mean,
        components,
        eigenvalues,
        min: vec![f64::INFINITY; n_features],
        max: vec![f64::NEG_INFINITY; n_features],
    };
    for s in samples {
        for (f, y) in pos.project(s).into_iter().enumerate() {
            pos.min[f] = pos.min[f].min(y);
            pos.max[f] = pos.max[f].max(y);
        }
    }
    Ok(pos)
}

/// Fits one PCA per patch position. `by_position[p][i]` is patch `p` of
/// training sample `i`.
pub fn fit_pca(by_position: &[Vec<Vec<f64>>], n_features: usize, policy: RankPolicy) -> Result<PcaModel> {
    if by_position.is_empty() || n_features == 0 {
        return Err(Error::Data("nothing to fit".into()));
    }
    let positions = by_position
        .iter()
        .enumerate()
        .map(|(p, samples)| {
            if samples.len() < n_features {
                return Err(Error::Data(format!(
                    "{} samples for {n_features} features at position {p}",
                    samples.len()
                )));
            }
            fit_position(samples, n_features, policy, p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PcaModel {
        positions,
        fitted: true,
    })
}

/// Features for every head plus the class index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedSample {
    pub heads: Vec<HeadFeatures>,
    pub label: usize,
}

/// One fitted PCA per head grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub grids: Vec<(usize, usize)>,
    pub pcas: Vec<PcaModel>,
}

impl FeaturePipeline {
    pub fn fit(train: &ImageSet, grids: &[(usize, usize)], n_features: usize, policy: RankPolicy) -> Result<Self> {
        let mut pcas = Vec::with_capacity(grids.len());
        for &grid in grids {
            let mut by_position: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(train.len()); grid.0 * grid.1];
            for i in 0..train.len() {
                for (p, patch) in patchify(train.image(i), train.rows, train.cols, grid)?.into_iter().enumerate() {
                    by_position[p].push(patch);
                }
            }
            pcas.push(fit_pca(&by_position, n_features, policy)?);
        }
        Ok(FeaturePipeline {
            grids: grids.to_vec(),
            pcas,
        })
    }

    pub fn prepare(&self, set: &ImageSet, index: usize) -> Result<PreparedSample> {
        let heads = self
            .grids
            .iter()
            .zip(&self.pcas)
            .map(|(&g, pca)| pca.prepare(&patchify(set.image(index), set.rows, set.cols, g)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSample {
            heads,
            label: set.labels[index] as usize,
        })
    }

    pub fn prepare_all(&self, set: &ImageSet) -> Result<Vec<PreparedSample>> {
        (0..set.len()).map(|i| self.prepare(set, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend(d.to_be_bytes());
        }
        b.extend(payload);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn load_idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 4 * 3).map(|v| v as u8).collect();
        let img = write(dir.path(), "img", &idx_bytes(IMAGE_MAGIC, &[2, 4, 3], &pixels));
        let lab = write(dir.path(), "lab", &idx_bytes(LABEL_MAGIC, &[2], &[7, 1]));
        let set = load_idx(&img, &lab).unwrap();
        assert_eq!((set.len(), set.rows, set.cols), (2, 4, 3));
        assert_eq!(set.image(1), &pixels[12..]);
        assert_eq!(set.labels, vec![7, 1]);

        let bad = write(dir.path(), "bad", &idx_bytes(0x0803_0000, &[2, 4, 3], &pixels));
        match load_idx(&bad, &lab) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let short = write(dir.path(), "short", &idx_bytes(IMAGE_MAGIC, &[2, 4, 3], &pixels[..20]));
        match load_idx(&short, &lab) {
            Err(Error::Format { offset, reason, .. }) => {
                assert_eq!(offset, 16 + 20);
                assert!(reason.contains("expected 24") && reason.contains("found 20"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
        let few = write(dir.path(), "few", &idx_bytes(LABEL_MAGIC, &[1], &[7]));
        assert!(matches!(load_idx(&img, &few), Err(Error::Format { .. })));
        assert!(matches!(load_idx(dir.path().join("missing"), &lab), Err(Error::Io { .. })));
    }

    fn toy_set(n_per_class: usize, classes: &[u8]) -> ImageSet {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class {
            for &c in classes {
                pixels.extend((0..16).map(|p| (p * 7 + i * 3 + c as usize * 11) as u8));
                labels.push(c);
            }
        }
        ImageSet::new(4, 4, pixels, labels).unwrap()
    }

    #[test]
    fn subsample_is_balanced_seeded_and_relabelled() {
        let train = toy_set(20, &[0, 1, 5]);
        let test = toy_set(10, &[0, 1, 5]);
        let (a, b) = subsample(&train, &test, &[5, 1], 8, 3, 42).unwrap();
        assert_eq!((a.len(), b.len()), (16, 6));
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 8);
        assert!(a.labels.iter().all(|&l| l < 2));
        let (a2, b2) = subsample(&train, &test, &[5, 1], 8, 3, 42).unwrap();
        assert_eq!((a, b), (a2, b2));
        assert!(matches!(subsample(&train, &test, &[0, 1], 21, 3, 0), Err(Error::Data(_))));
        assert!(subsample(&train, &test, &[1, 1], 2, 2, 0).is_err());
    }

    #[test]
    fn patchify_shapes_and_inversion() {
        let image: Vec<u8> = (0..784).map(|v| (v % 251) as u8).collect();
        let p = patchify(&image, 28, 28, (2, 2)).unwrap();
        assert_eq!((p.len(), p[0].len()), (4, 196));
        let p = patchify(&image, 28, 28, (7, 7)).unwrap();
        assert_eq!((p.len(), p[0].len()), (49, 16));
        // reassemble
        let mut back = vec![0u8; 784];
        for (idx, patch) in p.iter().enumerate() {
            let (br, bc) = (idx / 7, idx % 7);
            for (k, v) in patch.iter().enumerate() {
                back[(br * 4 + k / 4) * 28 + bc * 4 + k % 4] = (v * 255.0).round() as u8;
            }
        }
        assert_eq!(back, image);
        let flat = patchify(&[9u8; 784], 28, 28, (2, 2)).unwrap();
        assert!(flat.iter().flatten().all(|&v| v == 9.0 / 255.0));
        assert!(matches!(patchify(&image, 28, 28, (3, 3)), Err(Error::Config { .. })));
    }

    #[test]
    fn pca_on_axis_aligned_data() {
        // variance 9 on axis 1, 1 on axis 0
        let samples: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let a = if i % 2 == 0 { 1.0 } else { -1.0 };
                let b = if (i / 2) % 2 == 0 { 3.0 } else { -3.0 };
                vec![a + 2.0, b - 1.0]
            })
            .collect();
        let pca = fit_pca(&[samples.clone()], 2, RankPolicy::Error).unwrap();
        let p = &pca.positions[0];
        assert_eq!(p.components, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!((p.eigenvalues[0] - 9.0).abs() < 1e-12 && (p.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!(p.project(&p.mean).iter().all(|v| v.abs() < 1e-15));
        let f = p.features(&[3.0, 2.0]);
        assert!((f[0] - PI).abs() < 1e-12 && (f[1] - PI).abs() < 1e-12);
        let f = p.features(&[1.0, -4.0]);
        assert!(f.iter().all(|v| v.abs() < 1e-12));
        let f = p.features(&[2.0, -1.0]);
        assert!(f.iter().all(|v| (v - PI / 2.0).abs() < 1e-12));
        let f = p.features(&[100.0, -100.0]);
        assert_eq!(f, vec![0.0, PI]);
    }

    #[test]
    fn pca_rank_policy() {
        let samples = vec![vec![0.5, 0.5]; 10];
        assert!(matches!(fit_pca(&[samples.clone()], 1, RankPolicy::Error), Err(Error::Data(_))));
        let pca = fit_pca(&[samples.clone()], 2, RankPolicy::Allow).unwrap();
        assert_eq!(pca.prepare(&[vec![0.9, 0.1]]).unwrap(), vec![vec![0.0, 0.0]]);
        assert!(matches!(fit_pca(&[samples[..1].to_vec()], 2, RankPolicy::Allow), Err(Error::Data(_))));
    }

    #[test]
    fn unfitted_model_is_state_error() {
        assert!(matches!(PcaModel::default().prepare(&[vec![0.0]]), Err(Error::State(_))));
    }
}
