//! 3D conformations of repeating units.
//!
//! Conformers arrive from a JSON-Lines file (one record per polymer, see
//! [`load_conformers`]) or from [`chain_embed`], a deterministic zig-zag
//! layout used where no external conformer generator is available. Before
//! encoding, a conformer is augmented with a virtual atom at the centroid
//! ([`add_virtual_atom`]) whose final representation acts as the pooled 3D
//! embedding; for denoising, coordinates are perturbed by
//! [`inject_noise`].

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;
use crate::psmiles::{parse, PSmiles, PsmilesError};

/// Atom-type vocabulary for the 3D encoder. Index 0 is the virtual atom;
/// `*` covers star pseudo-atoms under the `keep` strategy.
pub const ATOM_TYPES: [&str; 15] = [
    "<virt>", "H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Se", "Br", "I", "*",
];

pub const VIRT_ID: usize = 0;

/// Minimum pairwise atom separation accepted as physical.
pub const MIN_SEPARATION: f64 = 1e-6;

pub fn atom_type_id(symbol: &str) -> Option<usize> {
    ATOM_TYPES.iter().position(|s| *s == symbol)
}

#[derive(Debug, Error)]
pub enum ConformerError {
    #[error("{path}:{line}: malformed conformer record: {msg}")]
    MalformedRecord {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: conformer invariant violated: {msg}")]
    InvariantViolation {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("conformer invariant violated: {0}")]
    Invalid(String),
    #[error("unknown atom type {0:?}")]
    UnknownAtomType(String),
    #[error(transparent)]
    Parse(#[from] PsmilesError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ConformerError>;

/// A validated conformation: atom-type ids plus coordinates in Å.
#[derive(Debug, Clone, PartialEq)]
pub struct Conformer {
    pub psmiles: String,
    pub atoms: Vec<usize>,
    pub coords: Vec<[f64; 3]>,
}

impl Conformer {
    pub fn new(psmiles: String, atoms: Vec<usize>, coords: Vec<[f64; 3]>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(ConformerError::Invalid("no atoms".into()));
        }
        if atoms.len() != coords.len() {
            return Err(ConformerError::Invalid(format!(
                "{} atoms vs {} coordinate rows",
                atoms.len(),
                coords.len()
            )));
        }
        for &id in &atoms {
            if id == VIRT_ID || id >= ATOM_TYPES.len() {
                return Err(ConformerError::Invalid(format!("bad atom-type id {id}")));
            }
        }
        validate_coords(&coords)?;
        Ok(Self {
            psmiles,
            atoms,
            coords,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }
}

fn validate_coords(coords: &[[f64; 3]]) -> Result<()> {
    for row in coords {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(ConformerError::Invalid("non-finite coordinate".into()));
        }
    }
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            if dist(&coords[i], &coords[j]) <= MIN_SEPARATION {
                return Err(ConformerError::Invalid(format!(
                    "atoms {i} and {j} overlap (separation <= {MIN_SEPARATION} Å)"
                )));
            }
        }
    }
    Ok(())
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn centroid(coords: &[[f64; 3]]) -> [f64; 3] {
    let n = coords.len() as f64;
    let mut c = [0.0; 3];
    for row in coords {
        for k in 0..3 {
            c[k] += row[k] / n;
        }
    }
    c
}

/// Conformer with the virtual atom prepended at row 0 (the centroid of the
/// real atoms).
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualizedConformer {
    pub psmiles: String,
    /// `atoms[0] == VIRT_ID`.
    pub atoms: Vec<usize>,
    /// `coords[0]` is the centroid of rows 1..
    pub coords: Vec<[f64; 3]>,
}

impl VirtualizedConformer {
    /// Total atom count including the virtual atom.
    pub fn n_total(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_real(&self) -> usize {
        self.atoms.len() - 1
    }

    /// Drops the virtual row, recovering the original conformer exactly.
    pub fn strip_virtual(&self) -> Conformer {
        Conformer {
            psmiles: self.psmiles.clone(),
            atoms: self.atoms[1..].to_vec(),
            coords: self.coords[1..].to_vec(),
        }
    }
}

/// Prepends the virtual atom at the arithmetic mean of the real atoms.
pub fn add_virtual_atom(c: &Conformer) -> VirtualizedConformer {
    let mut atoms = Vec::with_capacity(c.n_atoms() + 1);
    atoms.push(VIRT_ID);
    atoms.extend_from_slice(&c.atoms);
    let mut coords = Vec::with_capacity(c.n_atoms() + 1);
    coords.push(centroid(&c.coords));
    coords.extend_from_slice(&c.coords);
    VirtualizedConformer {
        psmiles: c.psmiles.clone(),
        atoms,
        coords,
    }
}

/// Clean/noisy coordinate pair for the denoising task. Rows include the
/// virtual atom at index 0, which is recomputed as the centroid of the noisy
/// real atoms rather than independently perturbed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyConformer {
    pub psmiles: String,
    pub atoms: Vec<usize>,
    pub clean: Vec<[f64; 3]>,
    pub noisy: Vec<[f64; 3]>,
    /// `noisy − clean`, rows aligned with `atoms`.
    pub noise: Vec<[f64; 3]>,
}

impl NoisyConformer {
    pub fn n_total(&self) -> usize {
        self.atoms.len()
    }
}

/// Perturbs every real-atom coordinate component by an independent
/// Uniform(−scale, +scale) draw, then recenters the virtual atom.
pub fn inject_noise(
    c: &VirtualizedConformer,
    scale: f64,
    rng: &mut impl Rng,
) -> NoisyConformer {
    assert!(scale >= 0.0, "noise scale must be nonnegative");
    let mut noisy = c.coords.clone();
    if scale > 0.0 {
        for row in noisy.iter_mut().skip(1) {
            for x in row.iter_mut() {
                *x += rng.random_range(-scale..=scale);
            }
        }
    }
    noisy[0] = centroid(&noisy[1..]);
    let noise = noisy
        .iter()
        .zip(&c.coords)
        .map(|(n, p)| [n[0] - p[0], n[1] - p[1], n[2] - p[2]])
        .collect();
    NoisyConformer {
        psmiles: c.psmiles.clone(),
        atoms: c.atoms.clone(),
        clean: c.coords.clone(),
        noisy,
        noise,
    }
}

/// Full pairwise Euclidean distance matrix (symmetric, zero diagonal).
pub fn pair_distances(coords: &[[f64; 3]]) -> Tensor {
    let n = coords.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&coords[i], &coords[j]);
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Tensor::new(vec![n, n], out)
}

/// Deterministic zig-zag layout with 1.5 Å between successive atoms.
///
/// Intended for converted (star-free) strings, but accepts any parseable
/// single-component SMILES — under the `keep` strategy stars are placed as
/// pseudo-atoms, mirroring how an external embedder treats dummy atoms. Not
/// physically accurate; it exists so pipelines run without external
/// chemistry tooling.
pub fn chain_embed(p: &PSmiles) -> Result<Conformer> {
    const STEP: f64 = 1.5;
    // Unit directions with a constant +x component: successive distances are
    // exactly STEP and the x coordinate strictly increases, so atoms never
    // coincide. The lateral component cycles through ±y and ±z.
    const C: f64 = 0.5;
    const S: f64 = 0.866_025_403_784_438_6; // sqrt(3)/2
    const DIRS: [[f64; 3]; 4] = [[C, S, 0.0], [C, 0.0, S], [C, -S, 0.0], [C, 0.0, -S]];

    let graph = parse(p)?;
    let mut atoms = Vec::with_capacity(graph.atoms.len());
    for atom in &graph.atoms {
        let symbol = if atom.is_star { "*" } else { atom.element.as_str() };
        let id = atom_type_id(symbol)
            .ok_or_else(|| ConformerError::UnknownAtomType(symbol.to_string()))?;
        atoms.push(id);
    }
    let mut coords = Vec::with_capacity(atoms.len());
    let mut pos = [0.0; 3];
    for k in 0..atoms.len() {
        coords.push(pos);
        let d = DIRS[k % DIRS.len()];
        for (p, dk) in pos.iter_mut().zip(d) {
            *p += STEP * dk;
        }
    }
    Conformer::new(p.text().to_string(), atoms, coords)
}

// ---- JSONL persistence -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ConformerRecord {
    psmiles: String,
    atoms: Vec<String>,
    coords: Vec<Vec<f64>>,
}

/// Loads conformers from a JSON-Lines file, one record per polymer:
/// `{"psmiles": ..., "atoms": ["C", ...], "coords": [[x,y,z], ...]}`.
/// Record order is preserved; the virtual atom is never stored.
pub fn load_conformers(path: &Path) -> Result<Vec<Conformer>> {
    let text = fs::read_to_string(path).map_err(|source| ConformerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let path_str = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ConformerRecord =
            serde_json::from_str(line).map_err(|e| ConformerError::MalformedRecord {
                path: path_str.clone(),
                line: lineno,
                msg: e.to_string(),
            })?;
        out.push(conformer_from_record(record, &path_str, lineno)?);
    }
    Ok(out)
}

fn conformer_from_record(
    record: ConformerRecord,
    path: &str,
    line: usize,
) -> Result<Conformer> {
    let malformed = |msg: String| ConformerError::MalformedRecord {
        path: path.to_string(),
        line,
        msg,
    };
    if record.atoms.len() != record.coords.len() {
        return Err(malformed(format!(
            "{} atoms vs {} coordinate rows",
            record.atoms.len(),
            record.coords.len()
        )));
    }
    let mut coords = Vec::with_capacity(record.coords.len());
    for (i, row) in record.coords.iter().enumerate() {
        if row.len() != 3 {
            return Err(malformed(format!(
                "coordinate row {i} has {} components, expected 3",
                row.len()
            )));
        }
        coords.push([row[0], row[1], row[2]]);
    }
    let mut atoms = Vec::with_capacity(record.atoms.len());
    for sym in &record.atoms {
        atoms.push(
            atom_type_id(sym)
                .filter(|&id| id != VIRT_ID)
                .ok_or_else(|| malformed(format!("unknown atom symbol {sym:?}")))?,
        );
    }
    Conformer::new(record.psmiles, atoms, coords).map_err(|e| match e {
        ConformerError::Invalid(msg) => ConformerError::InvariantViolation {
            path: path.to_string(),
            line,
            msg,
        },
        other => other,
    })
}

/// Writes conformers as JSON Lines (inverse of [`load_conformers`]).
pub fn write_conformers(path: &Path, conformers: &[Conformer]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|source| ConformerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for c in conformers {
        let record = ConformerRecord {
            psmiles: c.psmiles.clone(),
            atoms: c.atoms.iter().map(|&id| ATOM_TYPES[id].to_string()).collect(),
            coords: c.coords.iter().map(|r| r.to_vec()).collect(),
        };
        let line = serde_json::to_string(&record).expect("conformer record serializes");
        writeln!(file, "{line}").map_err(|source| ConformerError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

// ---- rigid-motion helpers (used by invariance tests and the encoders) ------

/// Rodrigues rotation matrix about `axis` (normalized internally).
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    assert!(norm > 0.0, "rotation axis must be nonzero");
    let (x, y, z) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub fn random_rigid_motion(rng: &mut impl Rng) -> ([[f64; 3]; 3], [f64; 3]) {
    let axis = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0f64),
    ];
    let axis = if axis.iter().all(|x| x.abs() < 1e-6) {
        [1.0, 0.0, 0.0]
    } else {
        axis
    };
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let t = [
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    ];
    (rotation_matrix(axis, angle), t)
}

pub fn apply_rigid(coords: &[[f64; 3]], r: &[[f64; 3]; 3], t: &[f64; 3]) -> Vec<[f64; 3]> {
    coords
        .iter()
        .map(|p| {
            let mut out = [0.0; 3];
            for (i, out_i) in out.iter_mut().enumerate() {
                *out_i = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i];
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn carbon_chain(coords: Vec<[f64; 3]>) -> Conformer {
        let c = atom_type_id("C").unwrap();
        Conformer::new("C".repeat(coords.len()), vec![c; coords.len()], coords).unwrap()
    }

    #[test]
    fn virtual_atom_at_midpoint() {
        let c = carbon_chain(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let v = add_virtual_atom(&c);
        assert_eq!(v.coords[0], [1.0, 0.0, 0.0]);
        assert_eq!(v.atoms[0], VIRT_ID);
        assert_eq!(v.n_total(), 3);
    }

    #[test]
    fn virtual_atom_single_point() {
        let c = carbon_chain(vec![[5.0, 5.0, 5.0]]);
        assert_eq!(add_virtual_atom(&c).coords[0], [5.0, 5.0, 5.0]);
    }

    #[test]
    fn virtual_atom_triangle_centroid() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 3.0_f64.sqrt() / 2.0, 0.0]];
        let c = carbon_chain(pts.clone());
        let v = add_virtual_atom(&c);
        let expect = centroid(&pts);
        for k in 0..3 {
            assert!((v.coords[0][k] - expect[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn strip_virtual_roundtrip_exact() {
        let c = carbon_chain(vec![[0.1, -0.2, 0.3], [1.4, 2.5, -3.6], [4.0, 0.0, 1.0]]);
        assert_eq!(add_virtual_atom(&c).strip_virtual(), c);
    }

    #[test]
    fn zero_noise_is_identity() {
        let v = add_virtual_atom(&carbon_chain(vec![[0.0; 3], [1.5, 0.0, 0.0]]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = inject_noise(&v, 0.0, &mut rng);
        assert_eq!(n.noisy, v.coords);
        assert!(n.noise.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn noise_bounded_by_scale_and_reproducible() {
        let v = add_virtual_atom(&carbon_chain(vec![
            [0.0; 3],
            [1.5, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [4.5, 0.0, 0.0],
        ]));
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            inject_noise(&v, 1.0, &mut rng)
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        for (row, clean) in a.noisy.iter().zip(&v.coords).skip(1) {
            for k in 0..3 {
                assert!((row[k] - clean[k]).abs() <= 1.0);
            }
        }
        // P̃ − P equals the recorded noise, virtual row included.
        for i in 0..a.n_total() {
            for k in 0..3 {
                assert_eq!(a.noisy[i][k] - a.clean[i][k], a.noise[i][k]);
            }
        }
        // Virtual row is the centroid of the noisy real atoms.
        let c = centroid(&a.noisy[1..]);
        for k in 0..3 {
            assert!((a.noisy[0][k] - c[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_magnitude_monte_carlo_mean() {
        // Mean |component noise| of U(−s, s) is s/2; check within 2%.
        let coords: Vec<[f64; 3]> = (0..100).map(|i| [i as f64 * 2.0, 0.0, 0.0]).collect();
        let v = add_virtual_atom(&carbon_chain(coords));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scale = 0.8;
        let mut total = 0.0;
        let mut count = 0usize;
        // 100 real atoms × 3 components × 334 draws ≈ 1e5 samples.
        for _ in 0..334 {
            let n = inject_noise(&v, scale, &mut rng);
            for row in &n.noise[1..] {
                for &x in row {
                    total += x.abs();
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        let expect = scale / 2.0;
        assert!(
            (mean - expect).abs() / expect < 0.02,
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn pair_distances_3_4_5() {
        let d = pair_distances(&[[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]]);
        assert_eq!(d.at(0, 1), 5.0);
        assert_eq!(d.at(1, 0), 5.0);
        assert_eq!(d.at(0, 0), 0.0);
    }

    #[test]
    fn pair_distances_rigid_motion_invariant() {
        let coords = vec![
            [0.0, 0.0, 0.0],
            [1.5, 0.3, -0.2],
            [2.9, -1.0, 0.8],
            [4.0, 0.5, 2.0],
        ];
        let base = pair_distances(&coords);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (r, t) = random_rigid_motion(&mut rng);
            let moved = pair_distances(&apply_rigid(&coords, &r, &t));
            let max_dev = base
                .data()
                .iter()
                .zip(moved.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_dev <= 1e-9, "max deviation {max_dev}");
        }
    }

    #[test]
    fn chain_embed_examples() {
        let two = chain_embed(&PSmiles::new("CC").unwrap()).unwrap();
        assert_eq!(two.n_atoms(), 2);
        assert!((dist(&two.coords[0], &two.coords[1]) - 1.5).abs() < 1e-12);

        let again = chain_embed(&PSmiles::new("CC").unwrap()).unwrap();
        assert_eq!(two, again);

        let four = chain_embed(&PSmiles::new("CCCC").unwrap()).unwrap();
        for w in four.coords.windows(2) {
            assert!((dist(&w[0], &w[1]) - 1.5).abs() < 1e-12);
        }
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(dist(&four.coords[i], &four.coords[j]) > MIN_SEPARATION);
            }
        }
    }

    #[test]
    fn chain_embed_propagates_parse_errors() {
        assert!(matches!(
            chain_embed(&PSmiles::new("C(C").unwrap()),
            Err(ConformerError::Parse(_))
        ));
    }

    #[test]
    fn jsonl_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conf.jsonl");

        let good = chain_embed(&PSmiles::new("CCO").unwrap()).unwrap();
        write_conformers(&path, &[good.clone()]).unwrap();
        let loaded = load_conformers(&path).unwrap();
        assert_eq!(loaded, vec![good]);

        std::fs::write(
            &path,
            r#"{"psmiles":"CC","atoms":["C","C"],"coords":[[0,0],[1,0,0]]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_conformers(&path),
            Err(ConformerError::MalformedRecord { line: 1, .. })
        ));

        std::fs::write(
            &path,
            r#"{"psmiles":"CC","atoms":["C","C"],"coords":[[0,0,0],[0,0,0]]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_conformers(&path),
            Err(ConformerError::InvariantViolation { line: 1, .. })
        ));

        std::fs::write(
            &path,
            r#"{"psmiles":"CC","atoms":["C","Qq"],"coords":[[0,0,0],[1,0,0]]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_conformers(&path),
            Err(ConformerError::MalformedRecord { line: 1, .. })
        ));

        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(
            load_conformers(&path),
            Err(ConformerError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn well_formed_record_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.jsonl");
        std::fs::write(
            &path,
            r#"{"psmiles":"CCCC","atoms":["C","C","C","C"],"coords":[[0,0,0],[1.5,0,0],[3,0,0],[4.5,0,0]]}"#,
        )
        .unwrap();
        let loaded = load_conformers(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].n_atoms(), 4);
        assert_eq!(loaded[0].psmiles, "CCCC");
    }
}
