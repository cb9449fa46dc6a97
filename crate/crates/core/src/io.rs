//! The DFA1 binary container and the PGM/CSV exports.
//!
//! Container layout: magic `DFA1`, u32 version, u32 record-type tag,
//! u64 payload length, payload. Scalars are little-endian; every float
//! array is preceded by its u32 shape dims, so round trips are
//! bit-exact.

use crate::attention::{AttentionParams, AnswerParams, ImageFeatures};
use crate::data::{Dataset, DatasetItem, PlantedMeta};
use crate::dcn::{DcnMode, DcnParams, DcnScaling, DcnVariant};
use crate::error::{Error, Result};
use crate::exemplar::{EmbeddingStore, KdIndex, KdNode};
use crate::metrics::{AnnotatedAnswers, Answer};
use crate::model::{Checkpoint, ModelDims, ModelKind, ModelParams};
use crate::tensor::{Matrix, Vector};
use std::fs;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"DFA1";
pub const VERSION: u32 = 1;

/// Record-type tags of the container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordType {
    Dataset = 1,
    Index = 2,
    Checkpoint = 3,
    AttentionMaps = 4,
}

impl RecordType {
    pub const fn tag(self) -> u32 {
        self as u32
    }
}

// ---------------------------------------------------------------------
// Payload encoding
// ---------------------------------------------------------------------

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    fn vector(&mut self, v: &Vector) {
        self.u32(v.len() as u32);
        for &x in v.as_slice() {
            self.f64(x);
        }
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &x in m.as_slice() {
            self.f64(x);
        }
    }

    fn u32_array(&mut self, xs: &[u32]) {
        self.u32(xs.len() as u32);
        for &x in xs {
            self.u32(x);
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.buf.len() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_prefix(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        // Guard against absurd lengths before allocating.
        if n.saturating_mul(elem_size) > self.buf.len().saturating_sub(self.pos) {
            return Err(Error::CorruptPayload {
                msg: format!("declared length {n} exceeds remaining payload"),
            });
        }
        Ok(n)
    }

    fn vector(&mut self) -> Result<Vector> {
        let n = self.len_prefix(8)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(Vector::from_vec(out))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if rows.saturating_mul(cols).saturating_mul(8) > self.buf.len().saturating_sub(self.pos) {
            return Err(Error::CorruptPayload {
                msg: format!("matrix {rows}x{cols} exceeds remaining payload"),
            });
        }
        let mut out = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            out.push(self.f64()?);
        }
        Matrix::from_vec(rows, cols, out)
    }

    fn u32_array(&mut self) -> Result<Vec<u32>> {
        let n = self.len_prefix(4)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.u32()?);
        }
        Ok(out)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len_prefix(1)?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::CorruptPayload {
            msg: "invalid utf-8 in string field".into(),
        })
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::CorruptPayload {
                msg: format!(
                    "{} trailing bytes after payload",
                    self.buf.len() - self.pos
                ),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Container framing
// ---------------------------------------------------------------------

fn write_record(path: &Path, record: RecordType, payload: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(payload.len() + 20);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&record.tag().to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    fs::write(path, out)?;
    Ok(())
}

fn read_record(path: &Path, expected: RecordType) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 20 {
        return Err(Error::Truncated {
            expected: 20,
            actual: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::BadVersion {
            found: version,
            supported: VERSION,
        });
    }
    let tag = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if tag != expected.tag() {
        return Err(Error::BadRecordType {
            expected: expected.tag(),
            found: tag,
        });
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let actual = (bytes.len() - 20) as u64;
    if actual < declared {
        return Err(Error::Truncated {
            expected: declared,
            actual,
        });
    }
    if actual > declared {
        return Err(Error::CorruptPayload {
            msg: format!("payload longer than declared: {actual} > {declared}"),
        });
    }
    Ok(bytes[20..].to_vec())
}

// ---------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------

fn write_answers(w: &mut Writer, answers: &AnnotatedAnswers) {
    for answer in answers.answers() {
        match answer {
            Answer::Class(c) => {
                w.u32(0);
                w.u32(*c);
            }
            Answer::Text(t) => {
                w.u32(1);
                w.str(t);
            }
        }
    }
}

fn read_answers(r: &mut Reader<'_>) -> Result<AnnotatedAnswers> {
    let mut out = Vec::with_capacity(AnnotatedAnswers::COUNT);
    for _ in 0..AnnotatedAnswers::COUNT {
        let tag = r.u32()?;
        out.push(match tag {
            0 => Answer::Class(r.u32()?),
            1 => Answer::Text(r.str()?),
            other => {
                return Err(Error::CorruptPayload {
                    msg: format!("unknown answer tag {other}"),
                })
            }
        });
    }
    AnnotatedAnswers::new(out)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.u32(dataset.regions as u32);
    w.u32(dataset.feature_dim as u32);
    w.u32(dataset.embed_dim as u32);
    w.u32(dataset.classes as u32);
    w.u32(dataset.items.len() as u32);
    for item in &dataset.items {
        w.u32(item.id);
        w.matrix(item.image_features.matrix());
        w.vector(&item.question_embedding);
        w.u32(item.answer);
        w.vector(&item.joint_embedding);
        match &item.reference_attention {
            Some(reference) => {
                w.u32(1);
                w.vector(reference);
            }
            None => w.u32(0),
        }
        write_answers(&mut w, &item.annotated);
    }
    match &dataset.planted {
        Some(p) => {
            w.u32(1);
            w.u32_array(&p.concept_of_item);
            w.u32_array(&p.region_of_concept);
            w.matrix(&p.question_prototypes);
            w.matrix(&p.joint_prototypes);
            w.matrix(&p.signatures);
            w.f64(p.saliency_gain);
        }
        None => w.u32(0),
    }
    write_record(path, RecordType::Dataset, &w.buf)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let payload = read_record(path, RecordType::Dataset)?;
    let mut r = Reader::new(&payload);
    let regions = r.u32()? as usize;
    let feature_dim = r.u32()? as usize;
    let embed_dim = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u32()?;
        let image = r.matrix()?;
        if image.shape() != (regions, feature_dim) {
            return Err(Error::CorruptPayload {
                msg: format!(
                    "item {id}: image shape {:?} does not match header {}x{}",
                    image.shape(),
                    regions,
                    feature_dim
                ),
            });
        }
        let question_embedding = r.vector()?;
        let answer = r.u32()?;
        let joint_embedding = r.vector()?;
        let reference_attention = match r.u32()? {
            0 => None,
            _ => Some(r.vector()?),
        };
        let annotated = read_answers(&mut r)?;
        items.push(DatasetItem {
            id,
            image_features: ImageFeatures::new(image),
            question_embedding,
            answer,
            joint_embedding,
            reference_attention,
            annotated,
        });
    }
    let planted = match r.u32()? {
        0 => None,
        _ => Some(PlantedMeta {
            concept_of_item: r.u32_array()?,
            region_of_concept: r.u32_array()?,
            question_prototypes: r.matrix()?,
            joint_prototypes: r.matrix()?,
            signatures: r.matrix()?,
            saliency_gain: r.f64()?,
        }),
    };
    r.done()?;
    Ok(Dataset {
        regions,
        feature_dim,
        embed_dim,
        classes,
        items,
        planted,
    })
}

// ---------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------

pub fn save_index(index: &KdIndex, path: &Path) -> Result<()> {
    let (store, perm, nodes, root) = index.parts();
    let mut w = Writer::default();
    w.u32_array(store.ids());
    w.matrix(store.embeddings());
    w.u32_array(perm);
    w.u32(nodes.len() as u32);
    for node in nodes {
        match node {
            KdNode::Leaf { start, len } => {
                w.u32(0);
                w.u32(*start);
                w.u32(*len);
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                w.u32(1);
                w.u32(*dim);
                w.f64(*value);
                w.u32(*left);
                w.u32(*right);
            }
        }
    }
    w.u32(root);
    write_record(path, RecordType::Index, &w.buf)
}

pub fn load_index(path: &Path) -> Result<KdIndex> {
    let payload = read_record(path, RecordType::Index)?;
    let mut r = Reader::new(&payload);
    let ids = r.u32_array()?;
    let embeddings = r.matrix()?;
    let store = EmbeddingStore::new(ids, embeddings)?;
    let perm = r.u32_array()?;
    let node_count = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let tag = r.u32()?;
        nodes.push(match tag {
            0 => KdNode::Leaf {
                start: r.u32()?,
                len: r.u32()?,
            },
            1 => KdNode::Split {
                dim: r.u32()?,
                value: r.f64()?,
                left: r.u32()?,
                right: r.u32()?,
            },
            other => {
                return Err(Error::CorruptPayload {
                    msg: format!("unknown kd-node tag {other}"),
                })
            }
        });
    }
    let root = r.u32()?;
    r.done()?;
    KdIndex::from_parts(store, perm, nodes, root)
}

// ---------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------

fn kind_tag(kind: ModelKind) -> u32 {
    ModelKind::all()
        .iter()
        .position(|k| *k == kind)
        .expect("every kind is listed") as u32
}

fn kind_from_tag(tag: u32) -> Result<ModelKind> {
    ModelKind::all()
        .get(tag as usize)
        .copied()
        .ok_or(Error::CorruptPayload {
            msg: format!("unknown model kind tag {tag}"),
        })
}

fn write_scaling(w: &mut Writer, scaling: &DcnScaling) {
    match scaling {
        DcnScaling::Diagonal(v) => {
            w.u32(0);
            w.vector(v);
        }
        DcnScaling::Full(m) => {
            w.u32(1);
            w.matrix(m);
        }
    }
}

fn read_scaling(r: &mut Reader<'_>) -> Result<DcnScaling> {
    Ok(match r.u32()? {
        0 => DcnScaling::Diagonal(r.vector()?),
        1 => DcnScaling::Full(r.matrix()?),
        other => {
            return Err(Error::CorruptPayload {
                msg: format!("unknown scaling tag {other}"),
            })
        }
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.u32(kind_tag(checkpoint.kind));
    w.u32(checkpoint.dims.regions as u32);
    w.u32(checkpoint.dims.feature_dim as u32);
    w.u32(checkpoint.dims.hidden_dim as u32);
    w.u32(checkpoint.dims.classes as u32);
    let p = &checkpoint.params;
    w.matrix(&p.attention.w_i);
    w.matrix(&p.attention.w_q);
    w.vector(&p.attention.b_q);
    w.vector(&p.attention.w_p);
    w.f64(p.attention.b_p);
    w.matrix(&p.answer.w_a);
    w.vector(&p.answer.b_a);
    match &p.dcn {
        Some(dcn) => {
            w.u32(1);
            w.u32(match dcn.mode {
                DcnMode::Add => 0,
                DcnMode::Mul => 1,
            });
            w.u32(match dcn.variant {
                DcnVariant::V1 => 0,
                DcnVariant::V2 => 1,
            });
            w.u32(dcn.use_tanh as u32);
            w.u32(dcn.mul_identity as u32);
            write_scaling(&mut w, &dcn.w1);
            write_scaling(&mut w, &dcn.w2);
        }
        None => w.u32(0),
    }
    write_record(path, RecordType::Checkpoint, &w.buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let payload = read_record(path, RecordType::Checkpoint)?;
    let mut r = Reader::new(&payload);
    let kind = kind_from_tag(r.u32()?)?;
    let dims = ModelDims {
        regions: r.u32()? as usize,
        feature_dim: r.u32()? as usize,
        hidden_dim: r.u32()? as usize,
        classes: r.u32()? as usize,
    };
    let attention = AttentionParams {
        w_i: r.matrix()?,
        w_q: r.matrix()?,
        b_q: r.vector()?,
        w_p: r.vector()?,
        b_p: r.f64()?,
    };
    let answer = AnswerParams {
        w_a: r.matrix()?,
        b_a: r.vector()?,
    };
    let dcn = match r.u32()? {
        0 => None,
        _ => {
            let mode = match r.u32()? {
                0 => DcnMode::Add,
                _ => DcnMode::Mul,
            };
            let variant = match r.u32()? {
                0 => DcnVariant::V1,
                _ => DcnVariant::V2,
            };
            let use_tanh = r.u32()? != 0;
            let mul_identity = r.u32()? != 0;
            let w1 = read_scaling(&mut r)?;
            let w2 = read_scaling(&mut r)?;
            Some(DcnParams {
                mode,
                variant,
                w1,
                w2,
                use_tanh,
                mul_identity,
            })
        }
    };
    r.done()?;
    if attention.w_i.shape() != (dims.feature_dim, dims.hidden_dim)
        || answer.w_a.shape() != (dims.feature_dim, dims.classes)
    {
        return Err(Error::CorruptPayload {
            msg: "checkpoint weight shapes disagree with stored dims".into(),
        });
    }
    Ok(Checkpoint {
        kind,
        dims,
        params: ModelParams {
            attention,
            answer,
            dcn,
        },
    })
}

// ---------------------------------------------------------------------
// Attention map sets
// ---------------------------------------------------------------------

/// Save labelled attention maps (item id, distribution over regions).
pub fn save_attention_maps(maps: &[(u32, Vector)], path: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.u32(maps.len() as u32);
    for (id, map) in maps {
        w.u32(*id);
        w.vector(map);
    }
    write_record(path, RecordType::AttentionMaps, &w.buf)
}

pub fn load_attention_maps(path: &Path) -> Result<Vec<(u32, Vector)>> {
    let payload = read_record(path, RecordType::AttentionMaps)?;
    let mut r = Reader::new(&payload);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u32()?;
        out.push((id, r.vector()?));
    }
    r.done()?;
    Ok(out)
}

// ---------------------------------------------------------------------
// PGM and CSV exports
// ---------------------------------------------------------------------

/// Grid layout for a flat map: square when the length is a perfect
/// square, one row otherwise.
pub fn map_grid_shape(len: usize) -> (usize, usize) {
    let side = (len as f64).sqrt().round() as usize;
    if side * side == len {
        (side, side)
    } else {
        (1, len)
    }
}

/// 8-bit binary PGM (P5) with max-value scaling.
pub fn write_pgm(map: &Vector, path: &Path) -> Result<()> {
    let (h, w) = map_grid_shape(map.len());
    let max = map
        .as_slice()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::InvalidArgument {
            op: "write_pgm",
            msg: "map maximum must be positive".into(),
        });
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &x in map.as_slice() {
        out.push(((x / max) * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Labelled rows of floats: `name,v0,v1,...` with a header line.
pub fn write_maps_csv(maps: &[(String, &Vector)], path: &Path) -> Result<()> {
    let mut out = String::new();
    if let Some((_, first)) = maps.first() {
        out.push_str("name");
        for i in 0..first.len() {
            out.push_str(&format!(",r{i}"));
        }
        out.push('\n');
    }
    for (name, map) in maps {
        out.push_str(name);
        for &x in map.as_slice() {
            out.push_str(&format!(",{x:.17e}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig};
    use crate::exemplar::KdIndex;
    use crate::model::ModelKind;
    use tempfile::TempDir;

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ds.dfa");
        let ds = generate(&GenConfig::new(60, 21)).unwrap();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
        // Saving again produces identical bytes.
        let path2 = dir.path().join("ds2.dfa");
        save_dataset(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn index_round_trip_preserves_queries() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("idx.dfa");
        let ds = generate(&GenConfig::new(100, 22)).unwrap();
        let index = KdIndex::build(ds.embedding_store().unwrap()).unwrap();
        save_index(&index, &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(index, loaded);
        assert_eq!(index.knn(5, 4).unwrap(), loaded.knn(5, 4).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_all_kinds() {
        let dir = TempDir::new().unwrap();
        let dims = ModelDims {
            regions: 6,
            feature_dim: 8,
            hidden_dim: 4,
            classes: 3,
        };
        for (i, kind) in ModelKind::all().into_iter().enumerate() {
            let path = dir.path().join(format!("ck{i}.dfa"));
            let ck = Checkpoint {
                kind,
                dims,
                params: ModelParams::init(&dims, kind, 7 + i as u64),
            };
            save_checkpoint(&ck, &path).unwrap();
            assert_eq!(load_checkpoint(&path).unwrap(), ck);
        }
    }

    #[test]
    fn attention_maps_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("maps.dfa");
        let maps = vec![
            (3u32, Vector::from_vec(vec![0.25, 0.75])),
            (9u32, Vector::from_vec(vec![0.5, 0.5])),
        ];
        save_attention_maps(&maps, &path).unwrap();
        assert_eq!(load_attention_maps(&path).unwrap(), maps);
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.dfa");
        let maps = vec![(1u32, Vector::from_vec(vec![1.0]))];
        save_attention_maps(&maps, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_attention_maps(&path),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncation_names_expected_and_actual() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("trunc.dfa");
        let maps = vec![(1u32, Vector::from_vec(vec![1.0, 2.0, 3.0]))];
        save_attention_maps(&maps, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match load_attention_maps(&path) {
            Err(Error::Truncated { expected, actual }) => {
                assert!(expected > actual);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_record_type_is_reported() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("maps.dfa");
        save_attention_maps(&[(1, Vector::from_vec(vec![1.0]))], &path).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::BadRecordType { .. })
        ));
    }

    #[test]
    fn unsupported_version_is_reported() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("ver.dfa");
        save_attention_maps(&[(1, Vector::from_vec(vec![1.0]))], &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_attention_maps(&path),
            Err(Error::BadVersion { found: 99, .. })
        ));
    }

    #[test]
    fn pgm_has_p5_header_and_scaled_bytes() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.pgm");
        let map = Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4]); // 2x2 grid
        write_pgm(&map, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 4);
        assert_eq!(pixels[3], 255); // max-value scaling
        assert_eq!(pixels[0], ((0.1 / 0.4) * 255.0_f64).round() as u8);
    }
}
