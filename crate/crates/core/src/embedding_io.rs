//! Embedding sets and the CEMB1 interchange format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CEMB" | version: u32 = 1 | kind: u8 | dim: u32 | count: u32
//! count x { name_len: u16 | name: UTF-8 | vector: dim x f32 }
//! ```
//!
//! Per-image files come with a TSV listing (`class_name<TAB>relative_path`)
//! whose row order is the embedding order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"CEMB";
pub const VERSION: u32 = 1;

/// Default cap on the number of images averaged into a class embedding.
pub const DEFAULT_MAX_IMAGES_PER_CLASS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingKind {
    PerClass,
    PerImage,
}

impl EmbeddingKind {
    fn tag(self) -> u8 {
        match self {
            EmbeddingKind::PerClass => 0,
            EmbeddingKind::PerImage => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(EmbeddingKind::PerClass),
            1 => Some(EmbeddingKind::PerImage),
            _ => None,
        }
    }
}

/// Named, fixed-dimension, finite `f32` vectors.
///
/// Immutable after construction; every constructor validates the invariants
/// (uniform length, unique names, finite components).
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    kind: EmbeddingKind,
    dim: usize,
    names: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.dim == other.dim
            && self.names == other.names
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingSet {
    pub fn new(kind: EmbeddingKind, dim: usize, entries: Vec<(String, Vec<f32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidEmbeddings(
                "dimension must be positive".into(),
            ));
        }
        let mut names = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (name, vector)) in entries.into_iter().enumerate() {
            if vector.len() != dim {
                return Err(Error::InvalidEmbeddings(format!(
                    "entry `{name}` has length {} but dim is {dim}",
                    vector.len()
                )));
            }
            if name.len() > u16::MAX as usize {
                return Err(Error::InvalidEmbeddings(format!(
                    "entry {i}: name longer than {} bytes",
                    u16::MAX
                )));
            }
            if let Some(c) = vector.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidEmbeddings(format!(
                    "entry `{name}`: component {c} is not finite"
                )));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidEmbeddings(format!("duplicate name `{name}`")));
            }
            names.push(name);
            data.extend_from_slice(&vector);
        }
        Ok(Self {
            kind,
            dim,
            names,
            data,
            index,
        })
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.position(name).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.names
            .iter()
            .enumerate()
            .map(move |(i, n)| (n.as_str(), self.vector(i)))
    }

    /// Copy of the vectors widened to `f64`, in entry order.
    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.vector(i).iter().map(|&v| v as f64).collect())
            .collect()
    }

    /// Same set with every nonzero vector scaled to unit Euclidean norm.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(self.dim) {
            let norm = chunk
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                for v in chunk {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        Self {
            kind: self.kind,
            dim: self.dim,
            names: self.names.clone(),
            data,
            index: self.index.clone(),
        }
    }
}

/// One image of a class-foldered dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub class_name: String,
    /// Path relative to the dataset root, forward slashes.
    pub relative_path: String,
    /// Row of the per-image embedding set. When absent the embedding is looked
    /// up by `relative_path` as the entry name.
    pub embedding_index: Option<usize>,
}

pub fn write_embeddings<W: Write>(set: &EmbeddingSet, mut sink: W) -> io::Result<()> {
    let count = u32::try_from(set.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too many entries for CEMB1"))?;
    let dim = u32::try_from(set.dim()).map_err(|_| {
        io::Error::new(io::ErrorKind::InvalidInput, "dimension too large for CEMB1")
    })?;
    sink.write_all(&MAGIC)?;
    sink.write_all(&VERSION.to_le_bytes())?;
    sink.write_all(&[set.kind().tag()])?;
    sink.write_all(&dim.to_le_bytes())?;
    sink.write_all(&count.to_le_bytes())?;
    let mut payload = Vec::with_capacity(set.dim() * 4);
    for (name, vector) in set.iter() {
        sink.write_all(&(name.len() as u16).to_le_bytes())?;
        sink.write_all(name.as_bytes())?;
        payload.clear();
        for v in vector {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&payload)?;
    }
    sink.flush()
}

pub fn write_embeddings_file(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(set, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn read_exact_or<R: Read>(
    source: &mut R,
    buf: &mut [u8],
    err: impl FnOnce() -> FormatError,
) -> Result<()> {
    match source.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(err().into()),
        Err(e) => Err(Error::io("<embedding source>", e)),
    }
}

fn read_u32<R: Read>(source: &mut R, field: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(source, &mut b, || FormatError::TruncatedHeader(field))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_embeddings<R: Read>(mut source: R) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut source, &mut magic, || {
        FormatError::TruncatedHeader("magic")
    })?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic).into());
    }
    let version = read_u32(&mut source, "version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let mut tag = [0u8; 1];
    read_exact_or(&mut source, &mut tag, || {
        FormatError::TruncatedHeader("kind")
    })?;
    let kind = EmbeddingKind::from_tag(tag[0]).ok_or(FormatError::BadKind(tag[0]))?;
    let dim = read_u32(&mut source, "dim")? as usize;
    if dim == 0 {
        return Err(FormatError::ZeroDim.into());
    }
    let count = read_u32(&mut source, "count")? as usize;

    let mut names = Vec::new();
    let mut data = Vec::new();
    let mut index = HashMap::new();
    let mut payload = vec![0u8; dim * 4];
    for record in 0..count {
        let mut len = [0u8; 2];
        read_exact_or(&mut source, &mut len, || FormatError::TruncatedRecord {
            record,
            field: "name_len",
        })?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut source, &mut name, || FormatError::TruncatedRecord {
            record,
            field: "name",
        })?;
        let name = String::from_utf8(name).map_err(|_| FormatError::InvalidName { record })?;
        read_exact_or(&mut source, &mut payload, || FormatError::TruncatedRecord {
            record,
            field: "vector",
        })?;
        for (component, bytes) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(bytes.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFinite {
                    record,
                    name,
                    component,
                }
                .into());
            }
            data.push(v);
        }
        if index.insert(name.clone(), record).is_some() {
            return Err(FormatError::DuplicateName { record, name }.into());
        }
        names.push(name);
    }
    let mut rest = Vec::new();
    source
        .read_to_end(&mut rest)
        .map_err(|e| Error::io("<embedding source>", e))?;
    if !rest.is_empty() {
        return Err(FormatError::TrailingBytes(rest.len()).into());
    }
    Ok(EmbeddingSet {
        kind,
        dim,
        names,
        data,
        index,
    })
}

pub fn read_embeddings_file(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses a `class_name<TAB>relative_path` listing. Row `i` refers to
/// embedding row `i`.
pub fn read_listing<R: BufRead>(source: R) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<listing>", e))?;
        if line.is_empty() {
            continue;
        }
        let (class_name, relative_path) =
            line.split_once('\t').ok_or_else(|| FormatError::Listing {
                line: i + 1,
                reason: "expected class_name<TAB>relative_path".into(),
            })?;
        if !seen.insert(relative_path.to_string()) {
            return Err(FormatError::Listing {
                line: i + 1,
                reason: format!("duplicate relative path `{relative_path}`"),
            }
            .into());
        }
        records.push(ImageRecord {
            class_name: class_name.to_string(),
            relative_path: relative_path.to_string(),
            embedding_index: Some(records.len()),
        });
    }
    Ok(records)
}

pub fn read_listing_file(path: &Path) -> Result<Vec<ImageRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_listing(BufReader::new(file))
}

pub fn write_listing<W: Write>(records: &[ImageRecord], mut sink: W) -> io::Result<()> {
    for r in records {
        writeln!(sink, "{}\t{}", r.class_name, r.relative_path)?;
    }
    sink.flush()
}

/// Class embeddings as the mean of (at most `max_images_per_class`) image
/// embeddings per class.
///
/// Images of a class are taken in lexicographic `relative_path` order before
/// the cap is applied. Sums run in `f64`. Output entries are sorted by class
/// name.
pub fn mean_class_embeddings(
    images: &EmbeddingSet,
    listing: &[ImageRecord],
    max_images_per_class: usize,
) -> Result<EmbeddingSet> {
    if max_images_per_class == 0 {
        return Err(Error::InvalidParams(
            "max_images_per_class must be at least 1".into(),
        ));
    }
    let mut by_class: BTreeMap<&str, Vec<&ImageRecord>> = BTreeMap::new();
    for record in listing {
        by_class.entry(&record.class_name).or_default().push(record);
    }
    let mut entries = Vec::with_capacity(by_class.len());
    for (class, mut records) in by_class {
        records.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
        records.truncate(max_images_per_class);
        let mut sum = vec![0.0f64; images.dim()];
        let mut used = 0usize;
        for record in records {
            let row = match record.embedding_index {
                Some(i) if i < images.len() => i,
                Some(i) => {
                    return Err(Error::InvalidEmbeddings(format!(
                        "listing row for `{}` points at embedding {i} but the set has {} entries",
                        record.relative_path,
                        images.len()
                    )))
                }
                None => images.position(&record.relative_path).ok_or_else(|| {
                    Error::InvalidEmbeddings(format!(
                        "no embedding named `{}`",
                        record.relative_path
                    ))
                })?,
            };
            for (s, &v) in sum.iter_mut().zip(images.vector(row)) {
                *s += v as f64;
            }
            used += 1;
        }
        if used == 0 {
            return Err(Error::MissingClass(class.to_string()));
        }
        let mean = sum.iter().map(|s| (s / used as f64) as f32).collect();
        entries.push((class.to_string(), mean));
    }
    EmbeddingSet::new(EmbeddingKind::PerClass, images.dim(), entries)
}

/// Mean class embeddings per class for an explicit class list; a class of the
/// list with no image rows is a [`Error::MissingClass`].
pub fn mean_class_embeddings_for(
    classes: &[String],
    images: &EmbeddingSet,
    listing: &[ImageRecord],
    max_images_per_class: usize,
) -> Result<EmbeddingSet> {
    let means = mean_class_embeddings(images, listing, max_images_per_class)?;
    if let Some(missing) = classes.iter().find(|c| means.position(c).is_none()) {
        return Err(Error::MissingClass(missing.clone()));
    }
    Ok(means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes_of(set: &EmbeddingSet) -> Vec<u8> {
        let mut buf = Vec::new();
        write_embeddings(set, &mut buf).unwrap();
        buf
    }

    #[test]
    fn smallest_file_layout() {
        let set = EmbeddingSet::new(
            EmbeddingKind::PerClass,
            2,
            vec![("a".into(), vec![0.0, 1.0])],
        )
        .unwrap();
        let buf = bytes_of(&set);
        assert_eq!(&buf[..4], b"CEMB");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(buf[8], 0);
        assert_eq!(&buf[9..13], &2u32.to_le_bytes());
        assert_eq!(&buf[13..17], &1u32.to_le_bytes());
        assert_eq!(&buf[17..19], &1u16.to_le_bytes());
        assert_eq!(buf[19], b'a');
        assert_eq!(&buf[20..24], &0.0f32.to_le_bytes());
        assert_eq!(&buf[24..28], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 28);
    }

    #[test]
    fn empty_set_is_valid() {
        let set = EmbeddingSet::new(EmbeddingKind::PerImage, 4, vec![]).unwrap();
        let buf = bytes_of(&set);
        assert_eq!(buf.len(), 17);
        assert_eq!(&buf[13..17], &0u32.to_le_bytes());
        assert_eq!(read_embeddings(&buf[..]).unwrap(), set);
    }

    #[test]
    fn bad_magic() {
        let mut buf = bytes_of(&EmbeddingSet::new(EmbeddingKind::PerClass, 1, vec![]).unwrap());
        buf[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            read_embeddings(&buf[..]),
            Err(Error::Format(FormatError::BadMagic(m))) if &m == b"XXXX"
        ));
    }

    #[test]
    fn truncated_mid_vector_names_record() {
        let set = EmbeddingSet::new(
            EmbeddingKind::PerClass,
            3,
            vec![("a".into(), vec![1.0; 3]), ("b".into(), vec![2.0; 3])],
        )
        .unwrap();
        let buf = bytes_of(&set);
        let cut = &buf[..buf.len() - 5];
        match read_embeddings(cut) {
            Err(Error::Format(FormatError::TruncatedRecord { record, field })) => {
                assert_eq!(record, 1);
                assert_eq!(field, "vector");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn raw_file(records: &[(&str, &[f32])], dim: u32) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"CEMB");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.push(0);
        buf.extend_from_slice(&dim.to_le_bytes());
        buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, v) in records {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            for x in *v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    #[test]
    fn duplicate_names_rejected() {
        let buf = raw_file(&[("a", &[1.0]), ("a", &[2.0])], 1);
        assert!(matches!(
            read_embeddings(&buf[..]),
            Err(Error::Format(FormatError::DuplicateName { record: 1, .. }))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let buf = raw_file(&[("a", &[1.0, f32::NAN])], 2);
        assert!(matches!(
            read_embeddings(&buf[..]),
            Err(Error::Format(FormatError::NonFinite {
                record: 0,
                component: 1,
                ..
            }))
        ));
        let buf = raw_file(&[("a", &[f32::INFINITY])], 1);
        assert!(read_embeddings(&buf[..]).is_err());
    }

    #[test]
    fn trailing_and_header_errors() {
        let mut buf = raw_file(&[("a", &[1.0])], 1);
        buf.push(0);
        assert!(matches!(
            read_embeddings(&buf[..]),
            Err(Error::Format(FormatError::TrailingBytes(1)))
        ));
        let buf = raw_file(&[], 0);
        assert!(matches!(
            read_embeddings(&buf[..]),
            Err(Error::Format(FormatError::ZeroDim))
        ));
        let mut buf = raw_file(&[], 1);
        buf[8] = 7;
        assert!(matches!(
            read_embeddings(&buf[..]),
            Err(Error::Format(FormatError::BadKind(7)))
        ));
        assert!(matches!(
            read_embeddings(&b"CEMB\x01\x00"[..]),
            Err(Error::Format(FormatError::TruncatedHeader("version")))
        ));
    }

    #[test]
    fn constructor_validates() {
        assert!(
            EmbeddingSet::new(EmbeddingKind::PerClass, 2, vec![("a".into(), vec![1.0])]).is_err()
        );
        assert!(EmbeddingSet::new(
            EmbeddingKind::PerClass,
            1,
            vec![("a".into(), vec![1.0]), ("a".into(), vec![1.0])]
        )
        .is_err());
        assert!(EmbeddingSet::new(
            EmbeddingKind::PerClass,
            1,
            vec![("a".into(), vec![f32::NAN])]
        )
        .is_err());
    }

    #[test]
    fn large_round_trip_is_bit_exact() {
        let mut rng = crate::rng::stream(5, 0);
        let entries = (0..100)
            .map(|i| {
                let v: Vec<f32> = (0..2048)
                    .map(|_| rand::Rng::random_range(&mut rng, -10.0f32..10.0))
                    .collect();
                (format!("class_{i:03}"), v)
            })
            .collect();
        let set = EmbeddingSet::new(EmbeddingKind::PerClass, 2048, entries).unwrap();
        let back = read_embeddings(&bytes_of(&set)[..]).unwrap();
        for i in 0..set.len() {
            for (a, b) in set.vector(i).iter().zip(back.vector(i)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(back, set);
    }

    fn per_image(vectors: &[(&str, &str, Vec<f32>)]) -> (EmbeddingSet, Vec<ImageRecord>) {
        let dim = vectors[0].2.len();
        let set = EmbeddingSet::new(
            EmbeddingKind::PerImage,
            dim,
            vectors
                .iter()
                .map(|(_, p, v)| (p.to_string(), v.clone()))
                .collect(),
        )
        .unwrap();
        let listing = vectors
            .iter()
            .enumerate()
            .map(|(i, (c, p, _))| ImageRecord {
                class_name: c.to_string(),
                relative_path: p.to_string(),
                embedding_index: Some(i),
            })
            .collect();
        (set, listing)
    }

    #[test]
    fn mean_of_single_and_pair() {
        let (set, listing) = per_image(&[
            ("a", "a/1", vec![3.0, -1.0]),
            ("b", "b/1", vec![0.0, 0.0]),
            ("b", "b/2", vec![2.0, 4.0]),
        ]);
        let means = mean_class_embeddings(&set, &listing, 50).unwrap();
        assert_eq!(means.kind(), EmbeddingKind::PerClass);
        assert_eq!(means.get("a").unwrap(), &[3.0, -1.0]);
        assert_eq!(means.get("b").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn cap_takes_lexicographic_prefix() {
        let (set, listing) = per_image(&[
            ("a", "a/3", vec![100.0]),
            ("a", "a/1", vec![1.0]),
            ("a", "a/2", vec![3.0]),
        ]);
        let means = mean_class_embeddings(&set, &listing, 2).unwrap();
        assert_eq!(means.get("a").unwrap(), &[2.0]);
    }

    #[test]
    fn lookup_by_name_when_index_absent() {
        let (set, mut listing) = per_image(&[("a", "a/1", vec![1.0]), ("a", "a/2", vec![3.0])]);
        listing.reverse();
        for r in &mut listing {
            r.embedding_index = None;
        }
        let means = mean_class_embeddings(&set, &listing, 5).unwrap();
        assert_eq!(means.get("a").unwrap(), &[2.0]);
    }

    #[test]
    fn missing_class_errors() {
        let (set, listing) = per_image(&[("a", "a/1", vec![1.0])]);
        let err =
            mean_class_embeddings_for(&["a".into(), "z".into()], &set, &listing, 5).unwrap_err();
        assert!(matches!(err, Error::MissingClass(c) if c == "z"));
    }

    #[test]
    fn mean_matches_accumulate_then_divide_oracle() {
        let mut rng = crate::rng::stream(17, 0);
        let rows: Vec<Vec<f32>> = (0..50)
            .map(|_| {
                (0..8)
                    .map(|_| rand::Rng::random_range(&mut rng, -5.0f32..5.0))
                    .collect()
            })
            .collect();
        let entries: Vec<(&str, String, Vec<f32>)> = rows
            .iter()
            .enumerate()
            .map(|(i, v)| ("c", format!("c/{i:02}"), v.clone()))
            .collect();
        let (set, listing) = per_image(
            &entries
                .iter()
                .map(|(c, p, v)| (*c, p.as_str(), v.clone()))
                .collect::<Vec<_>>(),
        );
        let got = mean_class_embeddings(&set, &listing, 50).unwrap();
        // Oracle: sequential 64-bit accumulation, then a single division.
        for d in 0..8 {
            let mut acc = 0.0f64;
            for r in &rows {
                acc += r[d] as f64;
            }
            let expect = (acc / 50.0) as f32;
            let g = got.get("c").unwrap()[d];
            assert!(
                (g - expect).abs() <= 1e-6 * expect.abs().max(1e-3),
                "{g} vs {expect}"
            );
        }
    }

    #[test]
    fn listing_round_trip_and_duplicates() {
        let text = "a\ta/1.bin\nb\tb/1.bin\n";
        let records = read_listing(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].embedding_index, Some(1));
        let mut out = Vec::new();
        write_listing(&records, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        assert!(read_listing("a\tx\nb\tx\n".as_bytes()).is_err());
        assert!(read_listing("no-tab\n".as_bytes()).is_err());
    }

    fn arb_set() -> impl Strategy<Value = EmbeddingSet> {
        (1usize..=64, 0usize..=200, any::<bool>()).prop_flat_map(|(dim, count, per_image)| {
            proptest::collection::vec(proptest::collection::vec(-1e30f32..1e30, dim), count)
                .prop_map(move |vectors| {
                    let kind = if per_image {
                        EmbeddingKind::PerImage
                    } else {
                        EmbeddingKind::PerClass
                    };
                    let entries = vectors
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| (format!("n{i}-é"), v))
                        .collect();
                    EmbeddingSet::new(kind, dim, entries).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trip(set in arb_set()) {
            let back = read_embeddings(&bytes_of(&set)[..]).unwrap();
            prop_assert_eq!(back, set);
        }

        #[test]
        fn mean_inside_hull_and_permutation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-100f32..100.0, 3), 1..20),
            seed in any::<u64>(),
        ) {
            let entries: Vec<_> = rows.iter().enumerate().map(|(i, v)| ("c", format!("c/{i:03}"), v.clone())).collect();
            let (set, listing) = per_image(&entries.iter().map(|(c, p, v)| (*c, p.as_str(), v.clone())).collect::<Vec<_>>());
            let mean = mean_class_embeddings(&set, &listing, 1000).unwrap();
            let m = mean.get("c").unwrap();
            for d in 0..3 {
                let lo = rows.iter().map(|r| r[d]).fold(f32::INFINITY, f32::min);
                let hi = rows.iter().map(|r| r[d]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(lo <= m[d] && m[d] <= hi);
            }
            let mut rng = crate::rng::stream(seed, 0);
            let shuffled = crate::rng::sample_without_replacement(&mut rng, &listing, listing.len());
            let again = mean_class_embeddings(&set, &shuffled, 1000).unwrap();
            prop_assert_eq!(again, mean);
        }
    }
}
