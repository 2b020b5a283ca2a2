//! Versioned binary model files.
//!
//! Layout: a fixed magic/version/mode prelude, then length-prefixed sections
//! (JSON header, bin mapper, trees, instances), each followed by its SHA-256.
//! Floats are stored as raw little-endian IEEE-754 bits so a round trip is
//! exact. `full` mode persists everything online learning needs — binned
//! rows, tombstones, score rows, the per-tree derivative ledger, per-node
//! histograms and candidates; `slim` keeps only what prediction needs.
//!
//! Leaf id lists are not stored: they are always sorted by id, so they are
//! rebuilt exactly by routing the live instances in ascending order on load.

use std::fs::File;
use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::BinMapper;
use crate::boost::hist::{Candidates, FeatureLayout, Histogram, Totals};
use crate::boost::instances::{InstanceStore, ScoreState};
use crate::boost::model::{HyperParams, Model, OnlineState};
use crate::boost::tree::{Node, NodeKind, Tree, ROOT};
use crate::error::Error;
use crate::Result;

const MAGIC: &[u8; 4] = b"OLBM";
const FORMAT_VERSION: u8 = 1;

const MODE_FULL: u8 = 0;
const MODE_SLIM: u8 = 1;

const SECTION_HEADER: u8 = 1;
const SECTION_MAPPER: u8 = 2;
const SECTION_TREES: u8 = 3;
const SECTION_INSTANCES: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportMode {
    Full,
    Slim,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u8,
    mode: String,
    params: HyperParams,
    n_features: usize,
    n_trees: usize,
}

pub fn save(model: &Model, path: &Path, mode: ExportMode) -> Result<()> {
    if mode == ExportMode::Full {
        model.online_state()?;
    }
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(match mode {
        ExportMode::Full => MODE_FULL,
        ExportMode::Slim => MODE_SLIM,
    });

    let header = Header {
        format_version: FORMAT_VERSION,
        mode: match mode {
            ExportMode::Full => "full".into(),
            ExportMode::Slim => "slim".into(),
        },
        params: model.params,
        n_features: model.mapper.n_features(),
        n_trees: model.trees.len(),
    };
    push_section(&mut out, SECTION_HEADER, serde_json::to_vec(&header).unwrap());
    push_section(&mut out, SECTION_MAPPER, encode_mapper(&model.mapper));
    push_section(&mut out, SECTION_TREES, encode_trees(model, mode));
    if mode == ExportMode::Full {
        push_section(&mut out, SECTION_INSTANCES, encode_instances(model));
    }

    // Write-to-temp then rename keeps the destination intact on failure.
    let tmp = path.with_extension("tmp");
    {
        let mut file = File::create(&tmp)?;
        file.write_all(&out)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };

    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mode = match r.u8()? {
        MODE_FULL => ExportMode::Full,
        MODE_SLIM => ExportMode::Slim,
        _ => return Err(r.corrupt("bad mode byte")),
    };

    let header_bytes = r.section(SECTION_HEADER)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| r.corrupt(&format!("bad header json: {e}")))?;
    header.params.validate()?;

    let mapper_bytes = r.section(SECTION_MAPPER)?;
    let mapper = decode_mapper(&mapper_bytes, header.n_features)?;
    let layout = FeatureLayout::from_mapper(&mapper);

    let trees_bytes = r.section(SECTION_TREES)?;
    let mut trees = decode_trees(&trees_bytes, header.n_trees, mode, &layout)?;

    let online = if mode == ExportMode::Full {
        let bytes = r.section(SECTION_INSTANCES)?;
        let (store, scores) = decode_instances(&bytes, &header.params, header.n_features)?;
        rebuild_leaf_ids(&mut trees, &store);
        Some(OnlineState { store, scores })
    } else {
        None
    };

    Ok(Model {
        params: header.params,
        mapper,
        layout,
        trees,
        online,
    })
}

fn rebuild_leaf_ids(trees: &mut [Tree], store: &InstanceStore) {
    for tree in trees.iter_mut() {
        for id in store.live_ids() {
            let leaf = tree.route(ROOT, store.row_uncounted(id));
            if let NodeKind::Leaf { ids, .. } = &mut tree.node_mut(leaf).kind {
                ids.push(id);
            }
        }
    }
}

// --- encoding ----------------------------------------------------------

fn push_section(out: &mut Vec<u8>, tag: u8, payload: Vec<u8>) {
    out.push(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    let digest = Sha256::digest(&payload);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&digest);
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

fn encode_mapper(mapper: &BinMapper) -> Vec<u8> {
    let mut e = Enc(Vec::new());
    e.u32(mapper.n_features() as u32);
    e.u32(mapper.max_bins() as u32);
    for f in 0..mapper.n_features() {
        e.f64(mapper.width(f));
        let b = mapper.boundaries(f);
        e.u32(b.len() as u32);
        for &v in b {
            e.f64(v);
        }
    }
    e.0
}

fn encode_trees(model: &Model, mode: ExportMode) -> Vec<u8> {
    let mut e = Enc(Vec::new());
    e.u32(model.trees.len() as u32);
    for tree in &model.trees {
        let compacted = tree.compact();
        e.u32(compacted.nodes.len() as u32);
        for node in &compacted.nodes {
            e.u64(node.path);
            match &node.kind {
                NodeKind::Leaf { beta, .. } => {
                    e.u8(0);
                    e.f64(*beta);
                    if mode == ExportMode::Full {
                        e.f64(node.totals.sum_rp);
                        e.f64(node.totals.sum_pp);
                        e.u32(node.totals.count);
                    }
                }
                NodeKind::Internal {
                    feature,
                    bin,
                    left,
                    right,
                    gain,
                    hist,
                    cands,
                } => {
                    e.u8(1);
                    e.u32(*feature);
                    e.u16(*bin);
                    e.u32(*left);
                    e.u32(*right);
                    if mode == ExportMode::Full {
                        e.f64(*gain);
                        e.f64(node.totals.sum_rp);
                        e.f64(node.totals.sum_pp);
                        e.u32(node.totals.count);
                        e.u32(cands.bins.len() as u32);
                        for &b in &cands.bins {
                            e.u16(b);
                        }
                        e.u32(cands.offsets.len() as u32);
                        for &o in &cands.offsets {
                            e.u32(o);
                        }
                        // Sparse histogram: only populated cells.
                        let nonzero = (0..hist.count.len())
                            .filter(|&i| {
                                hist.count[i] != 0
                                    || hist.sum_rp[i] != 0.0
                                    || hist.sum_pp[i] != 0.0
                            })
                            .collect::<Vec<_>>();
                        e.u32(nonzero.len() as u32);
                        for i in nonzero {
                            e.u32(i as u32);
                            e.f64(hist.sum_rp[i]);
                            e.f64(hist.sum_pp[i]);
                            e.u32(hist.count[i]);
                        }
                    }
                }
            }
        }
    }
    e.0
}

fn encode_instances(model: &Model) -> Vec<u8> {
    let state = model.online.as_ref().unwrap();
    let n = state.store.n_total();
    let k = model.params.n_classes;
    let m = model.params.iterations;
    let mut e = Enc(Vec::new());
    e.u64(n as u64);
    for &label in state.store.labels() {
        e.u32(label);
    }
    for &b in state.store.raw_bins() {
        e.u16(b);
    }
    let mut packed = vec![0u8; n.div_ceil(8)];
    for (i, &dead) in state.store.tombstones().iter().enumerate() {
        if dead {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    e.0.extend_from_slice(&packed);
    debug_assert_eq!(state.scores.raw_f().len(), n * k);
    for &v in state.scores.raw_f() {
        e.f64(v);
    }
    debug_assert_eq!(state.scores.raw_ledger().len(), n * m * k);
    for &v in state.scores.raw_ledger() {
        e.f64(v);
    }
    e.0
}

// --- decoding ----------------------------------------------------------

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, msg: &str) -> Error {
        Error::Corrupt {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                msg: format!(
                    "truncated: need {n} bytes, {} remain",
                    self.data.len() - self.pos
                ),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a tagged, length-prefixed, checksummed section payload.
    fn section(&mut self, expect_tag: u8) -> Result<Vec<u8>> {
        let tag = self.u8()?;
        if tag != expect_tag {
            return Err(self.corrupt(&format!("expected section {expect_tag}, found {tag}")));
        }
        let len = self.u64()? as usize;
        let payload = self.take(len)?.to_vec();
        let stored = self.take(32)?;
        let digest = Sha256::digest(&payload);
        if digest.as_slice() != stored {
            return Err(self.corrupt(&format!("checksum mismatch in section {expect_tag}")));
        }
        Ok(payload)
    }
}

struct Dec<'a> {
    r: Reader<'a>,
}

impl<'a> Dec<'a> {
    fn new(data: &'a [u8]) -> Self {
        Dec {
            r: Reader { data, pos: 0 },
        }
    }
    fn u8(&mut self) -> Result<u8> {
        self.r.u8()
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.r.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.r.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        self.r.u64()
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

fn decode_mapper(bytes: &[u8], expect_features: usize) -> Result<BinMapper> {
    let mut d = Dec::new(bytes);
    let n_features = d.u32()? as usize;
    if n_features != expect_features {
        return Err(d.r.corrupt("mapper feature count disagrees with header"));
    }
    let max_bins = d.u32()? as usize;
    let mut boundaries = Vec::with_capacity(n_features);
    let mut widths = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        widths.push(d.f64()?);
        let n = d.u32()? as usize;
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            b.push(d.f64()?);
        }
        boundaries.push(b);
    }
    Ok(BinMapper::from_parts(boundaries, widths, max_bins))
}

fn decode_trees(
    bytes: &[u8],
    expect_trees: usize,
    mode: ExportMode,
    layout: &FeatureLayout,
) -> Result<Vec<Tree>> {
    let mut d = Dec::new(bytes);
    let n_trees = d.u32()? as usize;
    if n_trees != expect_trees {
        return Err(d.r.corrupt("tree count disagrees with header"));
    }
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = d.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let path = d.u64()?;
            let kind_tag = d.u8()?;
            match kind_tag {
                0 => {
                    let beta = d.f64()?;
                    let totals = if mode == ExportMode::Full {
                        Totals {
                            sum_rp: d.f64()?,
                            sum_pp: d.f64()?,
                            count: d.u32()?,
                        }
                    } else {
                        Totals::default()
                    };
                    nodes.push(Node {
                        path,
                        totals,
                        kind: NodeKind::Leaf {
                            beta,
                            ids: Vec::new(),
                        },
                    });
                }
                1 => {
                    let feature = d.u32()?;
                    let bin = d.u16()?;
                    let left = d.u32()?;
                    let right = d.u32()?;
                    let (gain, totals, cands, hist) = if mode == ExportMode::Full {
                        let gain = d.f64()?;
                        let totals = Totals {
                            sum_rp: d.f64()?,
                            sum_pp: d.f64()?,
                            count: d.u32()?,
                        };
                        let n_bins = d.u32()? as usize;
                        let mut cbins = Vec::with_capacity(n_bins);
                        for _ in 0..n_bins {
                            cbins.push(d.u16()?);
                        }
                        let n_offsets = d.u32()? as usize;
                        let mut offsets = Vec::with_capacity(n_offsets);
                        for _ in 0..n_offsets {
                            offsets.push(d.u32()?);
                        }
                        let mut hist = Histogram::zeroed(layout.total_bins());
                        let nonzero = d.u32()? as usize;
                        for _ in 0..nonzero {
                            let i = d.u32()? as usize;
                            if i >= layout.total_bins() {
                                return Err(d.r.corrupt("histogram cell out of range"));
                            }
                            hist.sum_rp[i] = d.f64()?;
                            hist.sum_pp[i] = d.f64()?;
                            hist.count[i] = d.u32()?;
                        }
                        (
                            gain,
                            totals,
                            Candidates {
                                bins: cbins,
                                offsets,
                            },
                            hist,
                        )
                    } else {
                        (
                            0.0,
                            Totals::default(),
                            Candidates::default(),
                            Histogram::default(),
                        )
                    };
                    nodes.push(Node {
                        path,
                        totals,
                        kind: NodeKind::Internal {
                            feature,
                            bin,
                            left,
                            right,
                            gain,
                            hist,
                            cands,
                        },
                    });
                }
                t => return Err(d.r.corrupt(&format!("bad node tag {t}"))),
            }
        }
        if nodes.is_empty() {
            return Err(d.r.corrupt("empty tree"));
        }
        trees.push(Tree { nodes });
    }
    Ok(trees)
}

fn decode_instances(
    bytes: &[u8],
    params: &HyperParams,
    n_features: usize,
) -> Result<(InstanceStore, ScoreState)> {
    let mut d = Dec::new(bytes);
    let n = d.u64()? as usize;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(d.u32()?);
    }
    let mut bins = Vec::with_capacity(n * n_features);
    for _ in 0..n * n_features {
        bins.push(d.u16()?);
    }
    let packed = d.r.take(n.div_ceil(8))?;
    let tombstones: Vec<bool> = (0..n).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect();
    let k = params.n_classes;
    let m = params.iterations;
    let mut f = Vec::with_capacity(n * k);
    for _ in 0..n * k {
        f.push(d.f64()?);
    }
    let mut ledger = Vec::with_capacity(n * m * k);
    for _ in 0..n * m * k {
        ledger.push(d.f64()?);
    }
    Ok((
        InstanceStore::from_parts(bins, labels, n_features, tombstones),
        ScoreState::from_parts(k, m, f, ledger),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::model::Model;
    use crate::synth::gaussian_blobs;

    fn trained() -> Model {
        let raw = gaussian_blobs(120, 4, 3, Some(32), 9);
        let params = HyperParams {
            iterations: 4,
            n_classes: 3,
            max_leaves: 5,
            max_bins: 64,
            sample_rate: 0.5,
            ..HyperParams::default()
        };
        Model::train(&raw, params).unwrap()
    }

    #[test]
    fn full_round_trip_predicts_identically() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save(&model, &path, ExportMode::Full).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.trees.len(), model.trees.len());
        let raw = gaussian_blobs(100, 4, 3, Some(32), 77);
        for i in 0..raw.n_rows() {
            let (a, _) = model.predict(raw.row(i)).unwrap();
            let (b, _) = loaded.predict(raw.row(i)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn slim_round_trip_predicts_identically_and_rejects_online() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.slim");
        save(&model, &path, ExportMode::Slim).unwrap();
        let mut loaded = load(&path).unwrap();
        let raw = gaussian_blobs(50, 4, 3, Some(32), 78);
        for i in 0..raw.n_rows() {
            let (a, _) = model.predict(raw.row(i)).unwrap();
            let (b, _) = loaded.predict(raw.row(i)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let err = loaded
            .decremental_learn(&[0], crate::online::UpdateOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::SlimModel));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save(&model, &path, ExportMode::Full).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = path.with_extension("cut");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        match load(&cut) {
            Err(Error::Corrupt { offset, msg }) => {
                assert!(offset > 0);
                assert!(msg.contains("truncated") || msg.contains("checksum"), "{msg}");
            }
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save(&model, &path, ExportMode::Full).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn unknown_version_rejected() {
        let model = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save(&model, &path, ExportMode::Full).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::UnsupportedVersion(99)) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
