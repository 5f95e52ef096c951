//! Binary artifact format for offline caches and reduced models.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field            | encoding                                      |
//! |------------------|-----------------------------------------------|
//! | magic            | 8 bytes `PRRBCART`                            |
//! | format version   | u32                                           |
//! | artifact kind    | u32 (1 offline cache, 2 reduced model)        |
//! | library hash     | u32 length, UTF-8 bytes                       |
//! | mesh size `h`    | f64                                           |
//! | frequency grid   | u64 `c_lower`, u64 `c_upper`, f64 `t_ref`     |
//! | metadata         | u64 length, UTF-8 JSON                        |
//! | dense blocks     | u64 count, then per block u64 rows, u64 cols, |
//! |                  | `rows * cols` f64 in column-major order       |
//! | checksum         | 32 byte SHA-256 of all preceding bytes        |
//!
//! The metadata JSON lists the blocks in order, so a reader in another
//! language needs nothing beyond this table.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bridge::SensorLayout;
use crate::eim::EimSurrogate;
use crate::error::{Error, Result};
use crate::library::{RefPort, Variant};
use crate::offline::{LiftIndex, OfflineCache, OfflineStats, PortSpace, VariantCache};
use crate::online::{ReducedModel, SensorBlock};
use crate::params::FrequencyGrid;

pub const MAGIC: &[u8; 8] = b"PRRBCART";
pub const FORMAT_VERSION: u32 = 1;
pub const KIND_OFFLINE_CACHE: u32 = 1;
pub const KIND_REDUCED_MODEL: u32 = 2;

/// Fixed header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactHeader {
    pub kind: u32,
    pub library_hash: String,
    pub h: f64,
    pub frequencies: FrequencyGrid,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupted("artifact truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).ok().filter(|&n| n <= self.buf.len()).ok_or_else(|| Error::Corrupted(format!("bad length {n}")))
    }
}

fn encode<M: Serialize>(header: &ArtifactHeader, meta: &M, blocks: &[&DMatrix<f64>]) -> Result<Vec<u8>> {
    let mut w = Writer { buf: Vec::new() };
    w.bytes(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(header.kind);
    w.u32(header.library_hash.len() as u32);
    w.bytes(header.library_hash.as_bytes());
    w.f64(header.h);
    w.u64(header.frequencies.c_lower as u64);
    w.u64(header.frequencies.c_upper as u64);
    w.f64(header.frequencies.sigma_t_ref);
    let json = serde_json::to_vec(meta).map_err(|e| Error::Corrupted(e.to_string()))?;
    w.u64(json.len() as u64);
    w.bytes(&json);
    w.u64(blocks.len() as u64);
    for b in blocks {
        w.u64(b.nrows() as u64);
        w.u64(b.ncols() as u64);
        for v in b.iter() {
            w.f64(*v);
        }
    }
    let sum = Sha256::digest(&w.buf);
    w.bytes(&sum);
    Ok(w.buf)
}

fn decode<M: for<'de> Deserialize<'de>>(bytes: &[u8], kind: u32) -> Result<(ArtifactHeader, M, Vec<DMatrix<f64>>)> {
    if bytes.len() < 8 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Corrupted("not an artifact file".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Corrupted("artifact checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::ArtifactMismatch(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let k = r.u32()?;
    if k != kind {
        return Err(Error::ArtifactMismatch(format!("artifact kind {k}, expected {kind}")));
    }
    let n = r.u32()? as usize;
    let library_hash = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Corrupted(e.to_string()))?;
    let h = r.f64()?;
    let frequencies = FrequencyGrid { c_lower: r.u64()? as usize, c_upper: r.u64()? as usize, sigma_t_ref: r.f64()? };
    let n = r.len()?;
    let meta: M = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Corrupted(format!("metadata: {e}")))?;
    let nb = r.len()?;
    let mut blocks = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (rows, cols) = (r.len()?, r.len()?);
        let data = r.take(rows.checked_mul(cols).and_then(|x| x.checked_mul(8)).ok_or_else(|| Error::Corrupted("block size".into()))?)?;
        let vals: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        blocks.push(DMatrix::from_vec(rows, cols, vals));
    }
    if r.pos != body.len() {
        return Err(Error::Corrupted("trailing bytes before checksum".into()));
    }
    Ok((ArtifactHeader { kind, library_hash, h, frequencies }, meta, blocks))
}

#[derive(Serialize, Deserialize)]
struct PortMeta {
    port: RefPort,
    eigenvalues: Vec<f64>,
    retained_energy: f64,
}

#[derive(Serialize, Deserialize)]
struct EimMeta {
    magic: Vec<usize>,
    interp: Vec<Vec<f64>>,
    training_errors: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VariantMeta {
    variant: Variant,
    lifts: Vec<LiftIndex>,
    inhomogeneity: Vec<usize>,
    eim: Option<EimMeta>,
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    /// Block names in file order.
    blocks: Vec<String>,
    ports: Vec<PortMeta>,
    variants: Vec<VariantMeta>,
    stats: OfflineStats,
    provenance: serde_json::Value,
}

const VARIANT_BLOCKS: [&str; 7] = ["w", "mass", "stiffness", "h1", "load_x", "load_y", "embed"];

/// Serializes an offline cache with free-form provenance metadata.
pub fn encode_offline_cache(cache: &OfflineCache, provenance: serde_json::Value) -> Result<Vec<u8>> {
    let mut names = Vec::new();
    let mut blocks: Vec<&DMatrix<f64>> = Vec::new();
    let mut eim_blocks = Vec::new();
    for p in &cache.ports {
        names.push(format!("port.{:?}.modes", p.port));
        blocks.push(&p.modes);
    }
    for v in &cache.variants {
        if let Some(e) = &v.eim {
            let n = e.basis.first().map_or(0, |b| b.len());
            eim_blocks.push(DMatrix::from_fn(n, e.basis.len(), |i, q| e.basis[q][i]));
        }
    }
    let mut ei = 0;
    for v in &cache.variants {
        let mats = [&v.w, &v.mass, &v.stiffness, &v.h1, &v.load_x, &v.load_y, &v.embed];
        for (name, m) in VARIANT_BLOCKS.iter().zip(mats) {
            names.push(format!("variant.{:?}.{name}", v.variant));
            blocks.push(m);
        }
        if v.eim.is_some() {
            names.push(format!("variant.{:?}.eim_basis", v.variant));
            blocks.push(&eim_blocks[ei]);
            ei += 1;
        }
    }
    let meta = CacheMeta {
        blocks: names,
        ports: cache
            .ports
            .iter()
            .map(|p| PortMeta { port: p.port, eigenvalues: p.eigenvalues.clone(), retained_energy: p.retained_energy })
            .collect(),
        variants: cache
            .variants
            .iter()
            .map(|v| VariantMeta {
                variant: v.variant,
                lifts: v.lifts.clone(),
                inhomogeneity: v.inhomogeneity.clone(),
                eim: v.eim.as_ref().map(|e| EimMeta {
                    magic: e.magic.clone(),
                    interp: e.interp.clone(),
                    training_errors: e.training_errors.clone(),
                }),
            })
            .collect(),
        stats: cache.stats.clone(),
        provenance,
    };
    let header = ArtifactHeader {
        kind: KIND_OFFLINE_CACHE,
        library_hash: cache.library_hash.clone(),
        h: cache.h,
        frequencies: cache.frequencies,
    };
    encode(&header, &meta, &blocks)
}

/// Deserializes an offline cache; `expected_library` guards against a cache
/// built for another archetype library.
pub fn decode_offline_cache(bytes: &[u8], expected_library: Option<&str>) -> Result<(OfflineCache, serde_json::Value)> {
    let (header, meta, blocks): (_, CacheMeta, _) = decode(bytes, KIND_OFFLINE_CACHE)?;
    if let Some(h) = expected_library {
        if h != header.library_hash {
            return Err(Error::ArtifactMismatch(format!("cache library hash {}, expected {h}", header.library_hash)));
        }
    }
    if meta.blocks.len() != blocks.len() {
        return Err(Error::Corrupted(format!("{} block names for {} blocks", meta.blocks.len(), blocks.len())));
    }
    let mut it = blocks.into_iter();
    let mut next = || it.next().ok_or_else(|| Error::Corrupted("missing block".into()));
    let mut ports = Vec::new();
    for p in meta.ports {
        ports.push(PortSpace { port: p.port, modes: next()?, eigenvalues: p.eigenvalues, retained_energy: p.retained_energy });
    }
    let mut variants = Vec::new();
    for v in meta.variants {
        let (w, mass, stiffness, h1, load_x, load_y, embed) = (next()?, next()?, next()?, next()?, next()?, next()?, next()?);
        let eim = match v.eim {
            Some(e) => {
                let b = next()?;
                let basis = (0..b.ncols()).map(|q| b.column(q).iter().copied().collect()).collect();
                Some(EimSurrogate { basis, magic: e.magic, interp: e.interp, training_errors: e.training_errors })
            }
            None => None,
        };
        variants.push(VariantCache {
            variant: v.variant,
            w,
            lifts: v.lifts,
            inhomogeneity: v.inhomogeneity,
            mass,
            stiffness,
            h1,
            load_x,
            load_y,
            embed,
            eim,
        });
    }
    let cache = OfflineCache {
        library_hash: header.library_hash,
        h: header.h,
        frequencies: header.frequencies,
        ports,
        variants,
        stats: meta.stats,
    };
    Ok((cache, meta.provenance))
}

pub fn save_offline_cache(path: &Path, cache: &OfflineCache, provenance: serde_json::Value) -> Result<()> {
    write_atomic(path, &encode_offline_cache(cache, provenance)?)
}

pub fn load_offline_cache(path: &Path, expected_library: Option<&str>) -> Result<(OfflineCache, serde_json::Value)> {
    decode_offline_cache(&std::fs::read(path)?, expected_library)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SensorMeta {
    comp: usize,
    layout: SensorLayout,
    points: [[f64; 2]; 4],
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    n: usize,
    blocks: Vec<String>,
    n_components: usize,
    n_slots: usize,
    sensors: Vec<SensorMeta>,
    provenance: serde_json::Value,
}

/// Serializes a reduced model.
pub fn encode_reduced_model(model: &ReducedModel, header: &ArtifactHeader, provenance: serde_json::Value) -> Result<Vec<u8>> {
    let mut names = vec!["mass".to_string(), "damping".into(), "stiffness".into()];
    let mut blocks: Vec<&DMatrix<f64>> = vec![&model.mass, &model.damping, &model.stiffness];
    for (c, z) in model.z.iter().enumerate() {
        names.push(format!("z.{c}"));
        blocks.push(z);
    }
    for (s, (x, y)) in model.load_x.iter().zip(&model.load_y).enumerate() {
        names.extend([format!("load_x.{s}"), format!("load_y.{s}")]);
        blocks.extend([x, y]);
    }
    for (b, s) in model.sensors.iter().enumerate() {
        names.push(format!("sensor.{b}.q"));
        blocks.push(&s.q);
    }
    let meta = ModelMeta {
        n: model.n,
        blocks: names,
        n_components: model.z.len(),
        n_slots: model.load_x.len(),
        sensors: model.sensors.iter().map(|s| SensorMeta { comp: s.comp, layout: s.layout, points: s.points }).collect(),
        provenance,
    };
    let header = ArtifactHeader { kind: KIND_REDUCED_MODEL, ..header.clone() };
    encode(&header, &meta, &blocks)
}

pub fn decode_reduced_model(bytes: &[u8]) -> Result<(ArtifactHeader, ReducedModel, serde_json::Value)> {
    let (header, meta, blocks): (_, ModelMeta, _) = decode(bytes, KIND_REDUCED_MODEL)?;
    if blocks.len() != 3 + meta.n_components + 2 * meta.n_slots + meta.sensors.len() {
        return Err(Error::Corrupted("reduced model block count".into()));
    }
    let mut it = blocks.into_iter();
    let mut next = || it.next().expect("block count checked");
    let (mass, damping, stiffness) = (next(), next(), next());
    let z = (0..meta.n_components).map(|_| next()).collect();
    let (mut load_x, mut load_y) = (Vec::new(), Vec::new());
    for _ in 0..meta.n_slots {
        load_x.push(next());
        load_y.push(next());
    }
    let sensors = meta.sensors.into_iter().map(|s| SensorBlock { comp: s.comp, layout: s.layout, points: s.points, q: next() }).collect();
    let model = ReducedModel { n: meta.n, z, mass, damping, stiffness, load_x, load_y, sensors };
    Ok((header, model, meta.provenance))
}
