//! Binary formats: AFM1 feature matrices, TRJ1 trajectories, A2AM models.
//!
//! All integers and floats are little-endian. Payloads are f32 on disk and
//! f64 in memory; writes truncate f64 to f32, which is the documented
//! precision contract. Every writer goes through [`atomic_write`], so a
//! rerun replaces outputs without ever exposing a partial file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::{ArticulatoryLayout, FeatureKind, FeatureMatrix};
use crate::neuralnet::{MlpModel, ModelSpec};

pub const AFM1_MAGIC: &[u8; 4] = b"AFM1";
pub const TRJ1_MAGIC: &[u8; 4] = b"TRJ1";
pub const A2AM_MAGIC: &[u8; 4] = b"A2AM";
pub const FORMAT_VERSION: u32 = 1;

const TRJ_UNITS: &[u8; 2] = b"mm";

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Byte cursor with format-error positions for readers.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated while reading {what} at byte {} (need {n}, have {})",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expect {
            return Err(Error::format(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expect)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(
                self.path,
                format!("unsupported version {v}, expected {FORMAT_VERSION}"),
            ));
        }
        Ok(())
    }

    fn no_trailing(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "{} trailing bytes after payload at byte {}",
                    self.bytes.len() - self.pos,
                    self.pos
                ),
            ));
        }
        Ok(())
    }

    fn f32_matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let payload = self.take(rows * cols * 4, "payload")?;
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in payload.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Internal(format!("payload shape: {e}")))
    }
}

fn check_shape(path: &Path, rows: usize, cols: usize) -> Result<(u32, u32)> {
    if rows == 0 || cols == 0 {
        return Err(Error::Data(format!(
            "{}: cannot write an empty {rows}x{cols} matrix",
            path.display()
        )));
    }
    let rows = u32::try_from(rows)
        .map_err(|_| Error::Data(format!("{}: too many rows", path.display())))?;
    let cols = u32::try_from(cols)
        .map_err(|_| Error::Data(format!("{}: too many cols", path.display())))?;
    Ok((rows, cols))
}

fn push_f32_payload(out: &mut Vec<u8>, data: &Array2<f64>) {
    for &v in data.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Write a feature matrix as AFM1 (21-byte header + rows*cols f32).
pub fn write_afm(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    let (rows, cols) = check_shape(path, fm.frames(), fm.dim())?;
    let mut out = Vec::with_capacity(21 + fm.data().len() * 4);
    out.extend_from_slice(AFM1_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&(fm.frame_shift_ms() as f32).to_le_bytes());
    out.push(fm.kind().as_u8());
    push_f32_payload(&mut out, fm.data());
    atomic_write(path, &out)
}

pub fn read_afm(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor::new(&bytes, path);
    c.magic(AFM1_MAGIC)?;
    c.version()?;
    let rows = c.u32("rows")? as usize;
    let cols = c.u32("cols")? as usize;
    let frame_shift = c.f32("frame_shift_ms")? as f64;
    let kind_byte = c.u8("kind")?;
    let kind = FeatureKind::from_u8(kind_byte)
        .ok_or_else(|| Error::format(path, format!("unknown feature kind {kind_byte}")))?;
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, format!("empty matrix {rows}x{cols}")));
    }
    let data = c.f32_matrix(rows, cols)?;
    c.no_trailing()?;
    FeatureMatrix::new(data, frame_shift, kind)
}

/// Write a trajectory (18 static or 54 static+dynamic columns, mm) as TRJ1.
pub fn write_trj(path: &Path, traj: &Array2<f64>) -> Result<()> {
    let d = traj.ncols();
    if d != ArticulatoryLayout::STATIC_DIM && d != 3 * ArticulatoryLayout::STATIC_DIM {
        return Err(Error::Data(format!(
            "{}: trajectory must have 18 or 54 columns, got {d}",
            path.display()
        )));
    }
    let (rows, cols) = check_shape(path, traj.nrows(), d)?;
    let mut out = Vec::with_capacity(18 + traj.len() * 4);
    out.extend_from_slice(TRJ1_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(TRJ_UNITS);
    push_f32_payload(&mut out, traj);
    atomic_write(path, &out)
}

pub fn read_trj(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor::new(&bytes, path);
    c.magic(TRJ1_MAGIC)?;
    c.version()?;
    let rows = c.u32("rows")? as usize;
    let cols = c.u32("cols")? as usize;
    let units = c.take(2, "units")?;
    if units != TRJ_UNITS {
        return Err(Error::format(
            path,
            format!("unknown units tag {:?}", String::from_utf8_lossy(units)),
        ));
    }
    if cols != ArticulatoryLayout::STATIC_DIM && cols != 3 * ArticulatoryLayout::STATIC_DIM {
        return Err(Error::format(
            path,
            format!("trajectory must have 18 or 54 columns, got {cols}"),
        ));
    }
    if rows == 0 {
        return Err(Error::format(path, "empty trajectory".to_string()));
    }
    let data = c.f32_matrix(rows, cols)?;
    c.no_trailing()?;
    Ok(data)
}

/// Frame labels as a JSON array file.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let json = serde_json::to_vec(labels)
        .map_err(|e| Error::Internal(format!("label serialization: {e}")))?;
    atomic_write(path, &json)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(path, format!("invalid label array: {e}")))
}

/// The A2AM container: a JSON metadata document plus an f64 parameter blob
/// in the order the metadata declares.
#[derive(Debug, Clone, PartialEq)]
pub struct A2amModel {
    pub metadata: Value,
    pub params: Vec<f64>,
}

pub fn write_a2am(path: &Path, model: &A2amModel) -> Result<()> {
    let meta = serde_json::to_vec(&model.metadata)
        .map_err(|e| Error::Internal(format!("metadata serialization: {e}")))?;
    let meta_len = u32::try_from(meta.len())
        .map_err(|_| Error::Data(format!("{}: metadata too large", path.display())))?;
    let mut out = Vec::with_capacity(12 + meta.len() + model.params.len() * 8);
    out.extend_from_slice(A2AM_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta);
    for &v in &model.params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &out)
}

pub fn read_a2am(path: &Path) -> Result<A2amModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor::new(&bytes, path);
    c.magic(A2AM_MAGIC)?;
    c.version()?;
    let meta_len = c.u32("metadata length")? as usize;
    let meta = c.take(meta_len, "metadata")?;
    let metadata: Value = serde_json::from_slice(meta)
        .map_err(|e| Error::format(path, format!("invalid metadata JSON: {e}")))?;
    let rest = &bytes[c.pos..];
    if rest.len() % 8 != 0 {
        return Err(Error::format(
            path,
            format!(
                "parameter blob truncated: {} bytes after byte {} is not a whole number of f64",
                rest.len(),
                c.pos
            ),
        ));
    }
    let params = rest
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    Ok(A2amModel { metadata, params })
}

/// Save a model as A2AM. Reserved keys (`format`, `model`, `lhuc_speakers`,
/// `param_count`) are derived from the model; all other keys of `extra`
/// pass through untouched, so metadata survives load-edit-save cycles.
pub fn save_model(path: &Path, model: &MlpModel, extra: &Value) -> Result<()> {
    let mut meta: BTreeMap<String, Value> = match extra {
        Value::Null => BTreeMap::new(),
        Value::Object(map) => map.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        _ => {
            return Err(Error::Config(
                "model metadata must be a JSON object".into(),
            ))
        }
    };
    let speakers: Vec<String> = model.speakers().map(str::to_string).collect();
    let mut params: Vec<f64> = model.flat_params().to_vec();
    for id in &speakers {
        params.extend(model.lhuc_flat(id)?.iter());
    }
    meta.insert("format".into(), Value::from("a2am-mlp"));
    meta.insert(
        "model".into(),
        serde_json::to_value(model.spec())
            .map_err(|e| Error::Internal(format!("spec serialization: {e}")))?,
    );
    meta.insert(
        "lhuc_speakers".into(),
        serde_json::to_value(&speakers).unwrap(),
    );
    meta.insert("param_count".into(), Value::from(params.len()));
    let metadata =
        Value::Object(meta.into_iter().collect::<serde_json::Map<String, Value>>());
    write_a2am(path, &A2amModel { metadata, params })
}

/// Load a model saved by [`save_model`], returning it together with the
/// full metadata document (unknown keys included).
pub fn load_model(path: &Path) -> Result<(MlpModel, Value)> {
    let file = read_a2am(path)?;
    let spec_value = file
        .metadata
        .get("model")
        .ok_or_else(|| Error::format(path, "metadata lacks a 'model' entry"))?;
    let spec: ModelSpec = serde_json::from_value(spec_value.clone())
        .map_err(|e| Error::format(path, format!("invalid model spec: {e}")))?;
    let speakers: Vec<String> = match file.metadata.get("lhuc_speakers") {
        None => Vec::new(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Error::format(path, format!("invalid lhuc_speakers: {e}")))?,
    };
    let mut model = MlpModel::new(&spec, 0)?;
    let expected = model.param_count() + speakers.len() * model.lhuc_param_count();
    if file.params.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "parameter blob has {} values, topology needs {expected}",
                file.params.len()
            ),
        ));
    }
    let declared = file.metadata.get("param_count").and_then(Value::as_u64);
    if let Some(n) = declared {
        if n as usize != file.params.len() {
            return Err(Error::format(
                path,
                format!(
                    "declared param_count {n} does not match blob length {}",
                    file.params.len()
                ),
            ));
        }
    }
    let core = model.param_count();
    model.set_flat_params(&ndarray::Array1::from_vec(file.params[..core].to_vec()))?;
    let per_speaker = model.lhuc_param_count();
    for (i, id) in speakers.iter().enumerate() {
        model
            .register_speaker(id)
            .map_err(|_| Error::format(path, format!("speaker {id} but no lhuc layers")))?;
        let start = core + i * per_speaker;
        let alphas =
            ndarray::Array1::from_vec(file.params[start..start + per_speaker].to_vec());
        model.set_lhuc_flat(id, &alphas)?;
    }
    Ok((model, file.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{Activation, HeadKind, LayerSpec, Mode};
    use ndarray::{array, Array1};
    use tempfile::tempdir;

    fn sample_matrix() -> FeatureMatrix {
        let data = array![
            [0.5, -1.25, 3.75, 0.0],
            [0.0009765625, 2.5, -0.125, 8.0],
            [-4.5, 0.25, 1.5, -2.0]
        ];
        FeatureMatrix::new(data, 10.0, FeatureKind::Fbk).unwrap()
    }

    #[test]
    fn afm_round_trips_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.afm");
        let fm = sample_matrix();
        write_afm(&path, &fm).unwrap();
        let back = read_afm(&path).unwrap();
        // All sample values are f32-exact, so the round trip is lossless.
        assert_eq!(back.data(), fm.data());
        assert_eq!(back.kind(), FeatureKind::Fbk);
        assert_eq!(back.frame_shift_ms(), 10.0);
    }

    #[test]
    fn afm_file_size_matches_the_header_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.afm");
        let data = Array2::from_shape_fn((98, 40), |(i, j)| (i * 40 + j) as f64 * 0.01);
        let fm = FeatureMatrix::new(data, 10.0, FeatureKind::Fbk).unwrap();
        write_afm(&path, &fm).unwrap();
        let len = fs::metadata(&path).unwrap().len();
        // magic(4) + version(4) + rows(4) + cols(4) + shift(4) + kind(1).
        assert_eq!(len, 21 + 98 * 40 * 4);
    }

    #[test]
    fn afm_write_truncates_to_f32() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.afm");
        let v = 0.1f64 + 1e-12;
        let fm = FeatureMatrix::new(array![[v]], 5.0, FeatureKind::Fbk).unwrap();
        write_afm(&path, &fm).unwrap();
        let back = read_afm(&path).unwrap();
        assert_eq!(back.data()[[0, 0]], v as f32 as f64);
        assert_ne!(back.data()[[0, 0]], v);
    }

    /// Second-implementation oracle: a minimal reader built only on std,
    /// sharing no code with `read_afm`.
    fn naive_afm_parse(bytes: &[u8]) -> (u32, u32, f32, u8, Vec<f32>) {
        assert_eq!(&bytes[..4], b"AFM1");
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        assert_eq!(word(4), 1, "version");
        let rows = word(8);
        let cols = word(12);
        let shift = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        let kind = bytes[20];
        let vals: Vec<f32> = bytes[21..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals.len() as u32, rows * cols);
        (rows, cols, shift, kind, vals)
    }

    #[test]
    fn afm_parses_with_an_independent_reader() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.afm");
        let fm = sample_matrix();
        write_afm(&path, &fm).unwrap();
        let (rows, cols, shift, kind, vals) = naive_afm_parse(&fs::read(&path).unwrap());
        assert_eq!((rows, cols), (3, 4));
        assert_eq!(shift, 10.0);
        assert_eq!(kind, FeatureKind::Fbk.as_u8());
        for (i, &v) in vals.iter().enumerate() {
            assert_eq!(v as f64, fm.data()[[i / 4, i % 4]]);
        }
    }

    #[test]
    fn afm_rejects_malformed_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.afm");
        let fm = sample_matrix();
        write_afm(&path, &fm).unwrap();
        let good = fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_afm(&path), Err(Error::Format { .. })));

        // Truncated payload.
        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(read_afm(&path), Err(Error::Format { .. })));

        // Trailing garbage.
        let mut long = good.clone();
        long.push(0);
        fs::write(&path, &long).unwrap();
        assert!(matches!(read_afm(&path), Err(Error::Format { .. })));

        // Unknown kind byte.
        let mut bad_kind = good.clone();
        bad_kind[20] = 200;
        fs::write(&path, &bad_kind).unwrap();
        let err = read_afm(&path).unwrap_err();
        assert!(err.to_string().contains("kind"), "{err}");

        // Missing file is an I/O error naming the path.
        let gone = dir.path().join("missing.afm");
        match read_afm(&gone) {
            Err(Error::Io { path: p, .. }) => assert_eq!(p, gone),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn trj_round_trips_and_validates_columns() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.trj");
        let traj = Array2::from_shape_fn((7, 18), |(i, j)| i as f64 * 0.5 - j as f64);
        write_trj(&path, &traj).unwrap();
        assert_eq!(read_trj(&path).unwrap(), traj);
        let len = fs::metadata(&path).unwrap().len();
        // magic(4) + version(4) + rows(4) + cols(4) + units(2).
        assert_eq!(len, 18 + 7 * 18 * 4);

        let with_deltas = Array2::zeros((4, 54));
        write_trj(&path, &with_deltas).unwrap();
        assert_eq!(read_trj(&path).unwrap().dim(), (4, 54));

        let wrong = Array2::zeros((4, 20));
        assert!(matches!(write_trj(&path, &wrong), Err(Error::Data(_))));

        let empty = Array2::zeros((0, 18));
        assert!(matches!(write_trj(&path, &empty), Err(Error::Data(_))));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.labels.json");
        let labels = vec![0usize, 3, 1, 7, 7, 2];
        write_labels(&path, &labels).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);

        fs::write(&path, b"{not json").unwrap();
        assert!(matches!(read_labels(&path), Err(Error::Format { .. })));
    }

    fn lhuc_model() -> MlpModel {
        let spec = ModelSpec {
            layers: vec![
                LayerSpec::relu(3, 5),
                LayerSpec {
                    in_dim: 5,
                    out_dim: 4,
                    activation: Activation::Tanh,
                    dropout_rate: 0.0,
                    lhuc_enabled: true,
                },
            ],
            heads: vec![(HeadKind::Regression, 2), (HeadKind::Ce, 3)],
            bottleneck_tap: Some(0),
            aux_input: None,
        };
        let mut m = MlpModel::new(&spec, 42).unwrap();
        m.register_speaker("spk1").unwrap();
        m.set_lhuc_flat("spk1", &Array1::from_vec(vec![0.1, -0.2, 0.3, -0.4]))
            .unwrap();
        m.register_speaker("spk0").unwrap();
        m
    }

    #[test]
    fn model_round_trip_preserves_forward_outputs_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.a2am");
        let model = lhuc_model();
        save_model(&path, &model, &Value::Null).unwrap();
        let (back, meta) = load_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(meta["format"], "a2am-mlp");
        assert_eq!(meta["lhuc_speakers"], serde_json::json!(["spk0", "spk1"]));

        let x = array![[0.3, -0.7, 1.1], [0.0, 0.4, -0.2]];
        let a = model.forward(&x, None, Some("spk1"), Mode::Eval).unwrap();
        let b = back.forward(&x, None, Some("spk1"), Mode::Eval).unwrap();
        for kind in [HeadKind::Regression, HeadKind::Ce] {
            let (ya, yb) = (&a.heads[&kind], &b.heads[&kind]);
            assert!(ya.iter().zip(yb.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn model_save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("m1.a2am");
        let p2 = dir.path().join("m2.a2am");
        let model = lhuc_model();
        let extra = serde_json::json!({"stack_id": "abc123", "note": "x"});
        save_model(&p1, &model, &extra).unwrap();
        let (back, meta) = load_model(&p1).unwrap();
        assert_eq!(meta["stack_id"], "abc123");
        save_model(&p2, &back, &meta).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn model_load_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.a2am");
        let model = lhuc_model();
        save_model(&path, &model, &Value::Null).unwrap();
        let good = fs::read(&path).unwrap();

        // Truncating mid-blob leaves a non-whole number of f64 values.
        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));

        // Dropping exactly one f64 breaks the declared length.
        fs::write(&path, &good[..good.len() - 8]).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("param"), "{err}");

        // Bad version.
        let mut bad = good.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn a2am_preserves_unknown_metadata_keys() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.a2am");
        let model = lhuc_model();
        let extra = serde_json::json!({
            "future_field": {"nested": [1, 2, 3]},
            "another": "value"
        });
        save_model(&path, &model, &extra).unwrap();
        let (_, meta) = load_model(&path).unwrap();
        assert_eq!(meta["future_field"]["nested"][1], 2);
        assert_eq!(meta["another"], "value");
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("out.bin");
        atomic_write(&path, b"hello").unwrap();
        atomic_write(&path, b"world").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"world");
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
